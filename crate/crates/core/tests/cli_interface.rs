//! Drives the `apgp` binary end to end: subcommands, config + flag
//! overrides, the output-dir environment variable, exit codes, and the
//! machine-readable error JSON.

use std::fs;
use std::path::Path;
use std::process::Command;

fn apgp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_apgp"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMALL_SYNTH: &str = r#"
seed = 5
deterministic = true

[dataset.synth]
n = 120
d = 2

[kernel]
lengthscale = 0.4
noise_variance = 0.5

[partition]
batch_size = 20

[stopping]
min_epochs = 2
max_epochs = 200
train_tolerance = 0.5

[training]
adam_steps = 2
num_probes = 3

[solver]
preconditioner_rank = 10
"#;

#[test]
fn solve_writes_traces_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let out_dir = tmp.path().join("out");
    let status = apgp()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "manifest.json",
        "solve_summary.json",
        "solve_ap_gauss_southwell.csv",
        "solve_ap_cyclic.csv",
        "solve_ap_random.csv",
        "solve_cg.csv",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(out_dir.join("solve_cg.csv")).unwrap();
    assert!(trace.starts_with(
        "epoch,inner_iters,avg_rel_residual,frobenius_residual,cumulative_flops,wall_time_s"
    ));
}

#[test]
fn train_then_predict_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let out_dir = tmp.path().join("out");
    let status = apgp()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap().is_finite());
    assert!(metrics["nll"].as_f64().unwrap().is_finite());

    let status = apgp()
        .args(["predict", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .arg("--model")
        .arg(out_dir.join("model.json"))
        .status()
        .unwrap();
    assert!(status.success());
    let preds = fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("row,prediction,prediction_original_units"));
}

#[test]
fn synth_then_load_via_dataset_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let csv = tmp.path().join("data.csv");
    let status = apgp()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(tmp.path().join("synth_out"))
        .arg("--output")
        .arg(&csv)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(csv.exists());

    // Check on the generated file via --dataset-path override.
    let status = apgp()
        .args(["check", "--config"])
        .arg(&cfg)
        .arg("--dataset-path")
        .arg(&csv)
        .arg("--output-dir")
        .arg(tmp.path().join("check_out"))
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn check_exit_code_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let out_dir = tmp.path().join("out");
    let output = apgp()
        .args(["check", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("ok   convergence_envelope"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("check_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
}

#[test]
fn invalid_config_produces_error_json_and_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[dataset]\nnot_a_key = 1\n");
    let output = apgp().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr is machine-readable JSON");
    assert_eq!(parsed["error"]["kind"], "toml");
}

#[test]
fn missing_dataset_is_a_config_error() {
    let output = apgp().args(["solve"]).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(parsed["error"]["kind"], "config");
}

#[test]
fn output_dir_env_var_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let env_dir = tmp.path().join("env_out");
    let status = apgp()
        .args(["check", "--config"])
        .arg(&cfg)
        .env("APGP_OUTPUT_DIR", &env_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_dir.join("check_report.json").exists());
}

#[test]
fn flags_override_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let out_dir = tmp.path().join("out");
    // Restrict the benchmark to one rule and drop CG via flags.
    let status = apgp()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .args(["--benchmark-rules", "cyclic", "--include-cg", "false"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("solve_ap_cyclic.csv").exists());
    assert!(!out_dir.join("solve_ap_gauss_southwell.csv").exists());
    assert!(!out_dir.join("solve_cg.csv").exists());
}

#[test]
fn malformed_csv_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    fs::write(&data, "a,b,y\n1.0,2.0,3.0\n1.0,broken,3.0\n").unwrap();
    let output = apgp()
        .args(["check"])
        .arg("--dataset-path")
        .arg(&data)
        .arg("--output-dir")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(parsed["error"]["kind"], "data_format");
    assert!(parsed["error"]["message"]
        .as_str()
        .unwrap()
        .contains("line 3"));
}

#[test]
fn f32_precision_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_SYNTH);
    let out_dir = tmp.path().join("out");
    let status = apgp()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .args(["--precision", "f32"])
        .status()
        .unwrap();
    assert!(status.success());
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["precision"], "f32");
}
