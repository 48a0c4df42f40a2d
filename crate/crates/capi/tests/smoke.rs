//! Exercises the C ABI end to end: handle lifecycle, both solvers, train
//! and predict, and the error paths.

use apgp_capi::*;
use std::ffi::CStr;

fn grid_inputs(n: usize, d: usize) -> Vec<f64> {
    // Low-discrepancy-ish deterministic fill of [0, 1]^d.
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            let v = ((i * 37 + j * 11) % 101) as f64 / 101.0;
            x.push(v);
        }
    }
    x
}

fn make_spec(noise: f64) -> *mut ApgpSpec {
    let ls = [0.4, 0.4];
    let mut spec: *mut ApgpSpec = std::ptr::null_mut();
    let status = unsafe {
        apgp_spec_new(
            ApgpKernelFamily::Matern52,
            ls.as_ptr(),
            ls.len(),
            1.0,
            noise,
            0.0,
            &mut spec,
        )
    };
    assert_eq!(status, ApgpStatus::Ok);
    assert!(!spec.is_null());
    spec
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(apgp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn invalid_spec_reports_error_message() {
    let ls = [0.0, 1.0]; // zero lengthscale is invalid
    let mut spec: *mut ApgpSpec = std::ptr::null_mut();
    let status = unsafe {
        apgp_spec_new(
            ApgpKernelFamily::Rbf,
            ls.as_ptr(),
            2,
            1.0,
            0.1,
            0.0,
            &mut spec,
        )
    };
    assert_eq!(status, ApgpStatus::InvalidArgument);
    let msg = unsafe { CStr::from_ptr(apgp_last_error_message()) };
    assert!(msg.to_str().unwrap().contains("lengthscale"));
}

#[test]
fn null_pointers_are_rejected() {
    let mut spec: *mut ApgpSpec = std::ptr::null_mut();
    let status = unsafe {
        apgp_spec_new(
            ApgpKernelFamily::Rbf,
            std::ptr::null(),
            2,
            1.0,
            0.1,
            0.0,
            &mut spec,
        )
    };
    assert_eq!(status, ApgpStatus::NullPointer);
}

#[test]
fn ap_and_cg_agree_through_the_abi() {
    let n = 60;
    let d = 2;
    let ncols = 3;
    let x = grid_inputs(n, d);
    let b: Vec<f64> = (0..n * ncols).map(|i| ((i % 13) as f64 - 6.0) / 6.0).collect();
    let spec = make_spec(0.5);

    let mut w_ap = vec![0.0; n * ncols];
    let mut epochs = 0usize;
    let mut avg_rel = f64::NAN;
    let status = unsafe {
        apgp_ap_solve(
            spec,
            x.as_ptr(),
            n,
            d,
            b.as_ptr(),
            ncols,
            15,
            ApgpSelectionRule::GaussSouthwell,
            7,
            1e-10,
            1,
            5000,
            w_ap.as_mut_ptr(),
            &mut epochs,
            &mut avg_rel,
        )
    };
    assert_eq!(status, ApgpStatus::Ok);
    assert!(epochs >= 1);
    assert!(avg_rel < 1e-10);

    let mut w_cg = vec![0.0; n * ncols];
    let status = unsafe {
        apgp_cg_solve(
            spec,
            x.as_ptr(),
            n,
            d,
            b.as_ptr(),
            ncols,
            10,
            1e-10,
            1,
            5000,
            w_cg.as_mut_ptr(),
            std::ptr::null_mut(),
            std::ptr::null_mut(),
        )
    };
    assert_eq!(status, ApgpStatus::Ok);

    let num: f64 = w_ap
        .iter()
        .zip(&w_cg)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = w_cg.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num <= 1e-7 * den, "solvers disagree by {}", num / den);

    unsafe { apgp_spec_free(spec) };
}

#[test]
fn zero_noise_solve_fails_cleanly() {
    let n = 10;
    let d = 2;
    let x = grid_inputs(n, d);
    let b = vec![1.0; n];
    let spec = make_spec(0.0);
    let mut w = vec![0.0; n];
    let status = unsafe {
        apgp_ap_solve(
            spec,
            x.as_ptr(),
            n,
            d,
            b.as_ptr(),
            1,
            5,
            ApgpSelectionRule::Cyclic,
            0,
            0.1,
            1,
            10,
            w.as_mut_ptr(),
            std::ptr::null_mut(),
            std::ptr::null_mut(),
        )
    };
    assert_eq!(status, ApgpStatus::InvalidArgument);
    unsafe { apgp_spec_free(spec) };
}

#[test]
fn gp_train_and_predict_roundtrip() {
    let n = 50;
    let d = 2;
    let x = grid_inputs(n, d);
    // Smooth deterministic target.
    let y: Vec<f64> = (0..n)
        .map(|i| (x[i * d] * 3.0).sin() + 0.5 * x[i * d + 1])
        .collect();
    let spec = make_spec(0.3);
    let mut gp: *mut ApgpGp = std::ptr::null_mut();
    let status = unsafe { apgp_gp_new(x.as_ptr(), n, d, y.as_ptr(), spec, &mut gp) };
    assert_eq!(status, ApgpStatus::Ok);

    let status = unsafe {
        apgp_gp_train(
            gp,
            ApgpSolverMethod::AlternatingProjection,
            10,
            0,
            5,
            0.1,
            4,
            1e-4,
            11,
            1.0,
            3,
            200,
        )
    };
    assert_eq!(status, ApgpStatus::Ok);

    let mut ls = vec![0.0; d];
    let mut outputscale = 0.0;
    let mut noise = 0.0;
    let mut mean = 0.0;
    let status = unsafe {
        apgp_gp_hyperparameters(gp, ls.as_mut_ptr(), &mut outputscale, &mut noise, &mut mean)
    };
    assert_eq!(status, ApgpStatus::Ok);
    assert!(noise >= 1e-4);
    assert!(ls.iter().all(|&l| l > 0.0));
    assert!(outputscale > 0.0);

    // Predicting at the training points with the trained spec stays close
    // to the labels on this smooth target.
    let mut means = vec![0.0; n];
    let status = unsafe {
        apgp_gp_predict_mean(
            gp,
            x.as_ptr(),
            n,
            ApgpSolverMethod::ConjugateGradients,
            0,
            10,
            1e-6,
            1,
            2000,
            means.as_mut_ptr(),
        )
    };
    assert_eq!(status, ApgpStatus::Ok);
    let rmse: f64 = (means
        .iter()
        .zip(&y)
        .map(|(m, t)| (m - t) * (m - t))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    assert!(rmse < 0.5, "training-point rmse {rmse}");

    unsafe {
        apgp_gp_free(gp);
        apgp_spec_free(spec);
    }
}

/// Compile and run a small C program against the generated header and the
/// static library; skipped when no C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let target_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/debug");
    let staticlib = target_dir.join("libapgp_capi.a");
    if !staticlib.exists() {
        eprintln!("skipping: {} not built", staticlib.display());
        return;
    }
    let cc = ["cc", "gcc", "clang"]
        .iter()
        .find(|c| {
            std::process::Command::new(c)
                .arg("--version")
                .output()
                .is_ok()
        })
        .copied();
    let Some(cc) = cc else {
        eprintln!("skipping: no C compiler found");
        return;
    };

    let include_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let tmp = tempfile::tempdir().unwrap();
    let c_src = tmp.path().join("smoke.c");
    std::fs::write(
        &c_src,
        r#"
#include "apgp.h"
#include <stdio.h>

int main(void) {
    double lengthscales[2] = {0.4, 0.4};
    ApgpSpec *spec = NULL;
    if (apgp_spec_new(APGP_KERNEL_FAMILY_MATERN52, lengthscales, 2, 1.0, 0.5, 0.0, &spec)
            != APGP_STATUS_OK) {
        return 1;
    }
    enum { N = 20, D = 2 };
    double x[N * D];
    double b[N];
    double w[N];
    for (int i = 0; i < N; i++) {
        x[i * D] = (double)(i % 7) / 7.0;
        x[i * D + 1] = (double)(i % 5) / 5.0;
        b[i] = (double)i / N;
    }
    size_t epochs = 0;
    double avg_rel = 0.0;
    ApgpStatus status = apgp_ap_solve(spec, x, N, D, b, 1, 5,
                                      APGP_SELECTION_RULE_GAUSS_SOUTHWELL, 1,
                                      1e-8, 1, 1000, w, &epochs, &avg_rel);
    if (status != APGP_STATUS_OK) {
        fprintf(stderr, "solve failed: %s\n", apgp_last_error_message());
        return 2;
    }
    if (!(avg_rel < 1e-8)) {
        return 3;
    }
    apgp_spec_free(spec);
    printf("ok %zu %.3e\n", epochs, avg_rel);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("smoke");
    let out = std::process::Command::new(cc)
        .arg(&c_src)
        .arg("-I")
        .arg(&include_dir)
        .arg(staticlib)
        .arg("-lpthread")
        .arg("-ldl")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("compiler runs");
    assert!(
        out.status.success(),
        "C compilation failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = std::process::Command::new(&exe).output().expect("binary runs");
    assert!(
        run.status.success(),
        "C smoke binary failed: {:?}\n{}",
        run.status,
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok"));
}
