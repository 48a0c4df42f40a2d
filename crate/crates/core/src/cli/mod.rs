//! Experiment runner behind the command-line interface: dataset assembly,
//! solver head-to-head benchmarks, GP training/prediction runs, and the
//! configuration invariant checker. Every run writes a manifest capable of
//! reproducing it bit-for-bit in deterministic mode.

mod check;
mod config;

pub use check::{run_check, CheckItem, CheckReport};
pub use config::{
    BenchmarkConfig, DatasetConfig, ExperimentConfig, KernelConfig, PartitionConfig, Precision,
    RuleName, SolverConfig, SolverMethod, StoppingConfig, SynthConfig, TrainingConfig,
};

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::altproj::ap_solve;
use crate::cg::{cg_solve, pivoted_cholesky};
use crate::data::{load_dataset, synth_dataset, synth_raw, Dataset, DENSE_SAMPLE_LIMIT};
use crate::error::{Error, Result};
use crate::gp::{
    exact_predict_variance_nll, predict_mean, train, TraceProbeSet, TrainConfig,
};
use crate::kernels::{KernelSpec, KernelSpecValues};
use crate::partition::BlockPartition;
use crate::scalar::Scalar;
use crate::trace::Trace;

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "APGP_OUTPUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub precision: String,
    pub deterministic: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn prepare_output(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        precision: cfg.precision.name().to_string(),
        deterministic: cfg.deterministic,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

/// Build the dataset named by the config (CSV load or synthetic draw).
pub fn build_dataset<F: Scalar>(cfg: &ExperimentConfig) -> Result<Dataset<F>> {
    cfg.validate()?;
    if let Some(path) = &cfg.dataset.path {
        return load_dataset(
            path,
            cfg.dataset.split_ratio,
            cfg.seed,
            cfg.dataset.standardize_features,
        );
    }
    let synth = cfg.dataset.synth.as_ref().expect("validated");
    let generator = synth.kernel.as_ref().unwrap_or(&cfg.kernel);
    let spec: KernelSpec<F> = generator.to_values(synth.d)?.to_spec()?;
    synth_dataset(
        synth.n,
        synth.d,
        &spec,
        cfg.seed,
        cfg.dataset.split_ratio,
        cfg.dataset.standardize_features,
    )
}

fn initial_spec<F: Scalar>(cfg: &ExperimentConfig, dims: usize) -> Result<KernelSpec<F>> {
    cfg.kernel.to_values(dims)?.to_spec()
}

/// Per-method entry in the benchmark summary. A method that fails keeps
/// its error message here while the other methods continue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub converged: Option<bool>,
    pub total_epochs: Option<usize>,
    pub epochs_to_tolerance: Option<usize>,
    pub flops_to_tolerance: Option<u64>,
    pub final_avg_rel_residual: Option<f64>,
    pub wall_time_s: f64,
    pub trace_file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub tolerance: f64,
    pub num_rhs: usize,
    pub methods: Vec<MethodSummary>,
}

fn summarize(
    method: &str,
    trace_file: &str,
    tolerance: f64,
    deterministic: bool,
    outcome: std::result::Result<(bool, Trace), Error>,
) -> (MethodSummary, Option<Trace>) {
    match outcome {
        Ok((converged, mut trace)) => {
            let wall = if deterministic {
                0.0
            } else {
                trace.last().map_or(0.0, |r| r.wall_time_s)
            };
            if deterministic {
                trace.zero_wall_times();
            }
            let summary = MethodSummary {
                method: method.to_string(),
                converged: Some(converged),
                total_epochs: trace.last().map(|r| r.epoch),
                epochs_to_tolerance: trace.epochs_to_tolerance(tolerance),
                flops_to_tolerance: trace.flops_to_tolerance(tolerance),
                final_avg_rel_residual: trace.last().map(|r| r.avg_rel_residual),
                wall_time_s: wall,
                trace_file: Some(trace_file.to_string()),
                error: None,
            };
            (summary, Some(trace))
        }
        Err(err) => (
            MethodSummary {
                method: method.to_string(),
                converged: None,
                total_epochs: None,
                epochs_to_tolerance: None,
                flops_to_tolerance: None,
                final_avg_rel_residual: None,
                wall_time_s: 0.0,
                trace_file: None,
                error: Some(err.to_string()),
            },
            None,
        ),
    }
}

/// Run the requested AP selection rules and the CG baseline on the same
/// batched system `K W = [y - mu, probes]`, writing one trace CSV per
/// method plus a summary JSON.
pub fn run_solver_benchmark<F: Scalar>(cfg: &ExperimentConfig) -> Result<BenchmarkSummary> {
    let dir = prepare_output(cfg, "solve")?;
    let dataset: Dataset<F> = build_dataset(cfg)?;
    let x = dataset.train_x();
    let y = dataset.train_y();
    let spec = initial_spec::<F>(cfg, dataset.dims())?;
    let probes = TraceProbeSet::rademacher(
        y.view(),
        spec.mean_constant(),
        cfg.training.num_probes,
        cfg.seed ^ 0x243f_6a88_85a3_08d3,
    );
    let b = probes.matrix();
    let stop = cfg.stopping.train()?;
    let n = x.nrows();
    let partition = BlockPartition::new(n, cfg.partition.batch_size.min(n))?;

    let mut methods = Vec::new();
    for rule in &cfg.benchmark.rules {
        let name = format!("ap_{}", rule.name());
        let file = format!("solve_{name}.csv");
        let outcome = ap_solve(
            &spec,
            x.view(),
            b.view(),
            &partition,
            rule.to_rule(cfg.seed),
            &stop,
        )
        .map(|o| (o.converged, o.trace));
        let (summary, trace) = summarize(&name, &file, stop.tolerance, cfg.deterministic, outcome);
        if let Some(trace) = trace {
            let f = fs::File::create(dir.join(&file))?;
            trace.write_csv(f)?;
        }
        methods.push(summary);
    }

    if cfg.benchmark.include_cg {
        let file = "solve_cg.csv";
        let outcome = (|| {
            let factor = if cfg.solver.preconditioner_rank > 0 {
                Some(pivoted_cholesky(
                    &spec,
                    x.view(),
                    cfg.solver.preconditioner_rank.min(n),
                )?)
            } else {
                None
            };
            cg_solve(
                &spec,
                x.view(),
                b.view(),
                &stop,
                factor.as_ref(),
                cfg.solver.block_rows,
            )
            .map(|o| (o.converged, o.trace))
        })();
        let (summary, trace) = summarize("cg", file, stop.tolerance, cfg.deterministic, outcome);
        if let Some(trace) = trace {
            let f = fs::File::create(dir.join(file))?;
            trace.write_csv(f)?;
        }
        methods.push(summary);
    }

    let summary = BenchmarkSummary {
        tolerance: stop.tolerance,
        num_rhs: b.ncols(),
        methods,
    };
    write_json(&dir.join("solve_summary.json"), &summary)?;
    Ok(summary)
}

/// Trained model artifact: kernel hyperparameters plus the label
/// standardization needed to map predictions back to original units.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kernel: KernelSpecValues,
    pub precision: Precision,
    pub label_mean: f64,
    pub label_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMetrics {
    /// Test RMSE in standardized label units.
    pub rmse: f64,
    /// Exact mean per-point NLL; absent when the training set is too large
    /// for a dense factorization.
    pub nll: Option<f64>,
    pub train_epochs_total: usize,
    pub train_wall_time_s: f64,
    pub predict_wall_time_s: f64,
}

/// Full training run: fit hyperparameters, predict the test split, write
/// model + log + metrics.
pub fn run_training<F: Scalar>(cfg: &ExperimentConfig) -> Result<TrainingMetrics> {
    let dir = prepare_output(cfg, "train")?;
    let dataset: Dataset<F> = build_dataset(cfg)?;
    let x = dataset.train_x();
    let y = dataset.train_y();
    let init = initial_spec::<F>(cfg, dataset.dims())?;

    let train_cfg = TrainConfig {
        steps: cfg.training.adam_steps,
        step_size: cfg.training.step_size,
        num_probes: cfg.training.num_probes,
        probe_kind: cfg.training.probe_kind,
        solver: cfg.solver_choice(),
        stop: cfg.stopping.train()?,
        seed: cfg.seed,
        noise_floor: cfg.training.noise_floor,
        panel_rows: cfg.solver.block_rows,
    };

    let t_train = Instant::now();
    let (trained, mut log) = train(x.view(), y.view(), &init, &train_cfg)?;
    let train_wall = if cfg.deterministic {
        log.zero_wall_times();
        0.0
    } else {
        t_train.elapsed().as_secs_f64()
    };
    {
        let f = fs::File::create(dir.join("train_log.jsonl"))?;
        log.write_jsonl(f)?;
    }
    let model = ModelFile {
        kernel: KernelSpecValues::from(&trained),
        precision: cfg.precision,
        label_mean: dataset.label_mean,
        label_std: dataset.label_std,
    };
    write_json(&dir.join("model.json"), &model)?;

    let x_test = dataset.test_x();
    let y_test = dataset.test_y();
    let t_pred = Instant::now();
    let (means, _trace) = predict_mean(
        &trained,
        x.view(),
        y.view(),
        x_test.view(),
        &train_cfg.solver,
        &cfg.stopping.test()?,
        cfg.solver.block_rows,
    )?;
    let predict_wall = if cfg.deterministic {
        0.0
    } else {
        t_pred.elapsed().as_secs_f64()
    };

    let rmse = rmse(&means, &y_test);
    let nll = if x.nrows() <= DENSE_SAMPLE_LIMIT {
        let (_, nll) = exact_predict_variance_nll(
            &trained,
            x.view(),
            x_test.view(),
            y_test.view(),
            means.view(),
        )?;
        Some(nll)
    } else {
        None
    };

    let metrics = TrainingMetrics {
        rmse,
        nll,
        train_epochs_total: log.records.iter().map(|r| r.solver_epochs_or_iters).sum(),
        train_wall_time_s: train_wall,
        predict_wall_time_s: predict_wall,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

fn rmse<F: Scalar>(pred: &ndarray::Array1<F>, truth: &ndarray::Array1<F>) -> f64 {
    let m = pred.len() as f64;
    (pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum::<f64>()
        / m)
        .sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictMetrics {
    pub rmse: f64,
    pub nll: Option<f64>,
    pub predict_wall_time_s: f64,
}

/// Predict the test split of the configured dataset with a trained model.
/// The dataset seed reproduces the split the model was trained against.
pub fn run_predict<F: Scalar>(
    cfg: &ExperimentConfig,
    model_path: &Path,
    output_name: &str,
) -> Result<PredictMetrics> {
    let dir = prepare_output(cfg, "predict")?;
    let text = fs::read_to_string(model_path)?;
    let model: ModelFile = serde_json::from_str(&text)?;
    let spec: KernelSpec<F> = model.kernel.to_spec()?;

    let dataset: Dataset<F> = build_dataset(cfg)?;
    let x = dataset.train_x();
    let y = dataset.train_y();
    let x_test = dataset.test_x();
    let y_test = dataset.test_y();

    let t0 = Instant::now();
    let (means, _trace) = predict_mean(
        &spec,
        x.view(),
        y.view(),
        x_test.view(),
        &cfg.solver_choice(),
        &cfg.stopping.test()?,
        cfg.solver.block_rows,
    )?;
    let wall = if cfg.deterministic {
        0.0
    } else {
        t0.elapsed().as_secs_f64()
    };

    let mut f = fs::File::create(dir.join(output_name))?;
    writeln!(f, "row,prediction,prediction_original_units")?;
    for (i, &row) in dataset.test.iter().enumerate() {
        let p = means[i].as_f64();
        writeln!(
            f,
            "{},{:.16e},{:.16e}",
            row,
            p,
            p * model.label_std + model.label_mean
        )?;
    }

    let nll = if x.nrows() <= DENSE_SAMPLE_LIMIT {
        let (_, nll) =
            exact_predict_variance_nll(&spec, x.view(), x_test.view(), y_test.view(), means.view())?;
        Some(nll)
    } else {
        None
    };
    let metrics = PredictMetrics {
        rmse: rmse(&means, &y_test),
        nll,
        predict_wall_time_s: wall,
    };
    write_json(&dir.join("predict_metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Generate a synthetic dataset CSV (raw, unstandardized).
pub fn run_synth<F: Scalar>(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    prepare_output(cfg, "synth")?;
    let synth = cfg
        .dataset
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("synth requires a [dataset.synth] section".into()))?;
    let generator = synth.kernel.as_ref().unwrap_or(&cfg.kernel);
    let spec: KernelSpec<F> = generator.to_values(synth.d)?.to_spec()?;
    let (x, y) = synth_raw(synth.n, synth.d, &spec, cfg.seed)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let f = fs::File::create(output)?;
    crate::data::write_raw_csv(&x, &y, f)?;
    Ok(())
}
