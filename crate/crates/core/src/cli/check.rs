//! Invariant suite for a configuration: runs the structural and numerical
//! checks on a desk-scale slice of the configured problem and reports one
//! pass/fail line per invariant.

use ndarray::{s, Array2};
use serde::Serialize;

use crate::altproj::{
    ap_inner_step, ap_solve, bcd_step_oracle, epoch_flops, quadratic_objective, BlockSelector,
    SelectionRule, SolveState, StoppingCriteria,
};
use crate::data::Dataset;
use crate::error::Result;
use crate::kernels::{dense_kernel_matrix, kernel_block, kernel_matvec, KernelSpec};
use crate::linalg::{frobenius_norm, solve_spd, sym_eigenvalues};
use crate::partition::{build_cache, BlockPartition};
use crate::scalar::Scalar;
use crate::trace::column_norms;

use super::{build_dataset, prepare_output, write_json, ExperimentConfig};

/// Cap on the slice the checks run on; keeps the dense eigendecompositions
/// in the envelope check quick.
const CHECK_MAX_N: usize = 400;

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub n: usize,
    pub batch_size: usize,
    pub passed: bool,
    pub checks: Vec<CheckItem>,
}

struct Checker {
    items: Vec<CheckItem>,
}

impl Checker {
    fn record(&mut self, name: &str, passed: bool, detail: String) {
        println!("{} {name}: {detail}", if passed { "ok  " } else { "FAIL" });
        self.items.push(CheckItem {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

/// Run every invariant check against the configured kernel/dataset
/// (subsampled to at most [`CHECK_MAX_N`] training rows).
pub fn run_check<F: Scalar>(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let dir = prepare_output(cfg, "check")?;
    let dataset: Dataset<F> = build_dataset(cfg)?;
    let x_full = dataset.train_x();
    let y_full = dataset.train_y();
    let n = x_full.nrows().min(CHECK_MAX_N);
    let x = x_full.slice(s![..n, ..]).to_owned();
    let y = y_full.slice(s![..n]).to_owned();
    let spec: KernelSpec<F> = cfg.kernel.to_values(dataset.dims())?.to_spec()?;
    let bsz = cfg.partition.batch_size.min(n);
    let partition = BlockPartition::new(n, bsz)?;
    let tol = F::TOL_SCALE;

    // Small batched RHS: centered labels plus three sign probes.
    let probes = crate::gp::TraceProbeSet::rademacher(
        y.view(),
        spec.mean_constant(),
        3,
        cfg.seed ^ 0x1357_9bdf_2468_ace0,
    );
    let b = probes.matrix().clone();
    let b_norm = frobenius_norm(b.view());

    let mut c = Checker { items: Vec::new() };

    // Partition tiles [0, n).
    {
        let mut covered = vec![false; n];
        let mut ok = true;
        for range in partition.blocks() {
            for i in range {
                if covered[i] {
                    ok = false;
                }
                covered[i] = true;
            }
        }
        ok &= covered.iter().all(|&v| v);
        let sizes_ok = partition
            .blocks()
            .enumerate()
            .all(|(j, r)| r.len() == bsz || (j == partition.num_blocks() - 1 && !r.is_empty()));
        c.record(
            "partition_tiles",
            ok && sizes_ok,
            format!("{} blocks of size {bsz} cover {n} indices", partition.num_blocks()),
        );
    }

    // Cached factors reconstruct their blocks.
    let cache = build_cache(&spec, x.view(), &partition)?;
    {
        let mut worst = 0.0_f64;
        for (j, range) in partition.blocks().enumerate() {
            let idx: Vec<usize> = range.collect();
            let kii = kernel_block(&spec, x.view(), &idx, &idx)?;
            let f = cache.factor(j);
            let rec = f.dot(&f.t());
            let rel = frobenius_norm((&rec - &kii).view()) / frobenius_norm(kii.view());
            worst = worst.max(rel);
        }
        let bound = 1e-6 * tol;
        c.record(
            "cache_reconstruction",
            worst <= bound,
            format!("worst relative factor error {worst:.3e} (bound {bound:.1e})"),
        );
    }

    // Residual identity and objective monotonicity over two GS epochs.
    {
        let mut state = SolveState::new(b.view());
        let mut selector = BlockSelector::new(SelectionRule::GaussSouthwell);
        let mut worst_drift = 0.0_f64;
        let mut monotone = true;
        let mut prev_h =
            quadratic_objective(state.weights().view(), &spec, x.view(), b.view(), bsz)?;
        let h0 = prev_h;
        for _ in 0..2 * partition.num_blocks() {
            let blk = selector.select(state.residual(), &partition, state.inner_iter());
            ap_inner_step(&mut state, &cache, &spec, x.view(), &partition, blk)?;
            let kw = kernel_matvec(&spec, x.view(), state.weights().view(), bsz)?;
            let drift = frobenius_norm((&(&b - &kw) - state.residual()).view());
            worst_drift = worst_drift.max(drift);
            let h = quadratic_objective(state.weights().view(), &spec, x.view(), b.view(), bsz)?;
            if h > prev_h + F::cast(1e-12 * tol) * h0.abs().max(F::one()) {
                monotone = false;
            }
            prev_h = h;
        }
        let bound = 1e-6 * tol * b_norm;
        c.record(
            "residual_identity",
            worst_drift <= bound,
            format!("worst |R - (B - KW)| = {worst_drift:.3e} (bound {bound:.3e})"),
        );
        c.record(
            "objective_monotone",
            monotone,
            "h(W) non-increasing over every inner step".to_string(),
        );
    }

    // Alternating projection iterates match block coordinate descent.
    {
        let mut state = SolveState::new(b.view());
        let mut w_bcd = Array2::<F>::zeros(b.dim());
        let mut worst = 0.0_f64;
        for _ in 0..2 {
            for j in 0..partition.num_blocks() {
                ap_inner_step(&mut state, &cache, &spec, x.view(), &partition, j)?;
                bcd_step_oracle(&mut w_bcd, &spec, x.view(), b.view(), &partition, j)?;
                let rel = frobenius_norm((state.weights() - &w_bcd).view())
                    / frobenius_norm(w_bcd.view()).max(1e-30);
                worst = worst.max(rel);
            }
        }
        // The blanket f32 relaxation would land below machine epsilon for
        // this bound; floor it at a small multiple of eps.
        let bound = (1e-10 * tol).max(50.0 * F::epsilon().as_f64());
        c.record(
            "ap_bcd_equivalence",
            worst <= bound,
            format!("worst relative iterate gap {worst:.3e} (bound {bound:.1e})"),
        );
    }

    // Single full-size block solves the system in one inner iteration.
    {
        let full = BlockPartition::new(n, n)?;
        let full_cache = build_cache(&spec, x.view(), &full)?;
        let mut state = SolveState::new(b.view());
        ap_inner_step(&mut state, &full_cache, &spec, x.view(), &full, 0)?;
        let rel = frobenius_norm(state.residual().view()) / b_norm;
        let bound = 1e-8 * tol;
        c.record(
            "full_block_collapse",
            rel <= bound,
            format!("one-step relative residual {rel:.3e} (bound {bound:.1e})"),
        );
    }

    // Per-epoch convergence envelope exp(-t/kappa') under the GS rule.
    {
        let dense = dense_kernel_matrix(&spec, x.view())?;
        let eigs = sym_eigenvalues(dense.view())?;
        let lambda_min = eigs[0].as_f64();
        let mut lambda_max_block = 0.0_f64;
        for range in partition.blocks() {
            let idx: Vec<usize> = range.collect();
            let kii = kernel_block(&spec, x.view(), &idx, &idx)?;
            let be = sym_eigenvalues(kii.view())?;
            lambda_max_block = lambda_max_block.max(be[be.len() - 1].as_f64());
        }
        let kappa_prime = lambda_max_block / lambda_min;

        let w_star = solve_spd(dense.view(), b.view())?;
        let k_norm_sq = |w: &Array2<F>| -> f64 {
            let diff = w - &w_star;
            let kd = dense.dot(&diff);
            diff.iter()
                .zip(kd.iter())
                .map(|(&a, &b)| a.as_f64() * b.as_f64())
                .sum()
        };
        let init_gap = k_norm_sq(&Array2::zeros(b.dim()));
        let mut state = SolveState::new(b.view());
        let mut selector = BlockSelector::new(SelectionRule::GaussSouthwell);
        let mut ok = true;
        let mut worst_ratio = 0.0_f64;
        for t in 1..=10 {
            for _ in 0..partition.num_blocks() {
                let blk = selector.select(state.residual(), &partition, state.inner_iter());
                ap_inner_step(&mut state, &cache, &spec, x.view(), &partition, blk)?;
            }
            let gap = k_norm_sq(state.weights());
            let envelope = (-(t as f64) / kappa_prime).exp() * init_gap * (1.0 + 1e-8 * tol);
            if gap > envelope {
                ok = false;
            }
            if envelope > 0.0 {
                worst_ratio = worst_ratio.max(gap / envelope);
            }
        }
        c.record(
            "convergence_envelope",
            ok,
            format!(
                "kappa' = {kappa_prime:.2}, worst gap/envelope = {worst_ratio:.3e} over 10 epochs"
            ),
        );
    }

    // Instrumented FLOPs against the closed form (needs 1 << b << n).
    {
        if n / bsz >= 4 && bsz >= 8 && n % bsz == 0 {
            let stop = StoppingCriteria::new(1e-14, 3, 3)?;
            let out = ap_solve(
                &spec,
                x.view(),
                b.view(),
                &partition,
                SelectionRule::GaussSouthwell,
                &stop,
            )?;
            let delta = (out.trace.records[2].cumulative_flops
                - out.trace.records[1].cumulative_flops) as f64;
            let formula = epoch_flops(n, bsz, b.ncols());
            let rel = (delta - formula).abs() / formula;
            c.record(
                "flops_accounting",
                rel <= 0.05,
                format!("per-epoch counter within {:.2}% of closed form", rel * 100.0),
            );
        } else {
            c.record(
                "flops_accounting",
                true,
                format!("skipped: n={n}, b={bsz} outside the 1 << b << n regime"),
            );
        }
    }

    // Identical solves produce byte-identical traces.
    {
        let stop = StoppingCriteria::new(1e-6, 2, 50)?;
        let run = || -> Result<String> {
            let mut out = ap_solve(
                &spec,
                x.view(),
                b.view(),
                &partition,
                SelectionRule::Random { seed: cfg.seed },
                &stop,
            )?;
            out.trace.zero_wall_times();
            Ok(out.trace.to_csv_string())
        };
        let a = run()?;
        let bb = run()?;
        c.record(
            "determinism",
            a == bb,
            "repeated solves give byte-identical traces".to_string(),
        );
    }

    // Residual summary convention: zero columns count as converged.
    {
        let mut bz = b.clone();
        bz.column_mut(1).fill(F::zero());
        let norms = column_norms(bz.view());
        let (avg, _) = crate::trace::residual_summary(bz.view(), &norms);
        let expect = (bz.ncols() - 1) as f64 / bz.ncols() as f64;
        c.record(
            "zero_column_convention",
            (avg - expect).abs() < 1e-12,
            format!("avg_rel with one zero column = {avg} (expected {expect})"),
        );
    }

    let passed = c.items.iter().all(|i| i.passed);
    let report = CheckReport {
        n,
        batch_size: bsz,
        passed,
        checks: c.items,
    };
    write_json(&dir.join("check_report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::SynthConfig;

    #[test]
    fn check_passes_on_default_synthetic_config() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.synth = Some(SynthConfig {
            n: 120,
            d: 2,
            kernel: None,
        });
        cfg.kernel.lengthscale = 0.4;
        cfg.kernel.noise_variance = 0.5;
        cfg.partition.batch_size = 20;
        cfg.output_dir = tmp.path().to_path_buf();
        cfg.deterministic = true;
        let report = run_check::<f64>(&cfg).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        assert!(tmp.path().join("check_report.json").exists());
    }

    #[test]
    fn check_runs_in_f32_with_relaxed_tolerances() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.synth = Some(SynthConfig {
            n: 80,
            d: 2,
            kernel: None,
        });
        cfg.kernel.lengthscale = 0.4;
        cfg.kernel.noise_variance = 0.5;
        cfg.partition.batch_size = 16;
        cfg.output_dir = tmp.path().to_path_buf();
        cfg.precision = super::super::Precision::F32;
        let report = run_check::<f32>(&cfg).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
    }
}
