//! Command-line experiment runner. Configuration comes from a TOML file
//! (see README for the schema); every leaf key has a matching flag that
//! overrides it. Errors leave a machine-readable JSON object on stderr.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use apgp::cli::{
    self, ExperimentConfig, Precision, RuleName, SolverMethod, SynthConfig, OUTPUT_DIR_ENV,
};
use apgp::error::{Error, Result};
use apgp::gp::ProbeKind;
use apgp::kernels::KernelFamily;

#[derive(Parser)]
#[command(
    name = "apgp",
    version,
    about = "Gaussian-process regression with a blocked alternating-projection solver"
)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark the solvers on one batched system; writes trace CSVs and
    /// a summary JSON.
    Solve,
    /// Train hyperparameters, predict the test split, write model, log,
    /// and metrics.
    Train,
    /// Predict the configured dataset's test split with a trained model.
    Predict {
        /// Trained model file (model.json from `train`).
        #[arg(long)]
        model: PathBuf,
        /// Predictions CSV file name within the output directory.
        #[arg(long, default_value = "predictions.csv")]
        output: String,
    },
    /// Generate a synthetic GP-draw dataset CSV.
    Synth {
        /// Destination CSV path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the invariant suite against the configuration.
    Check,
}

/// One flag per config key.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    precision: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    deterministic: Option<bool>,

    #[arg(long, global = true)]
    dataset_path: Option<PathBuf>,
    #[arg(long, global = true)]
    synth_n: Option<usize>,
    #[arg(long, global = true)]
    synth_d: Option<usize>,
    #[arg(long, global = true)]
    split_ratio: Option<f64>,
    #[arg(long, global = true)]
    standardize_features: Option<bool>,

    #[arg(long, global = true)]
    kernel_family: Option<String>,
    #[arg(long, global = true)]
    lengthscale: Option<f64>,
    /// Comma-separated ARD lengthscales.
    #[arg(long, global = true)]
    lengthscales: Option<String>,
    #[arg(long, global = true)]
    outputscale: Option<f64>,
    #[arg(long, global = true)]
    noise_variance: Option<f64>,
    #[arg(long, global = true)]
    mean_constant: Option<f64>,

    #[arg(long, global = true)]
    batch_size: Option<usize>,

    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    rule: Option<String>,
    #[arg(long, global = true)]
    preconditioner_rank: Option<usize>,
    #[arg(long, global = true)]
    block_rows: Option<usize>,

    #[arg(long, global = true)]
    train_tolerance: Option<f64>,
    #[arg(long, global = true)]
    test_tolerance: Option<f64>,
    #[arg(long, global = true)]
    min_epochs: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,

    #[arg(long, global = true)]
    adam_steps: Option<usize>,
    #[arg(long, global = true)]
    step_size: Option<f64>,
    #[arg(long, global = true)]
    num_probes: Option<usize>,
    #[arg(long, global = true)]
    probe_kind: Option<String>,
    #[arg(long, global = true)]
    noise_floor: Option<f64>,

    /// Comma-separated selection rules for `solve`.
    #[arg(long, global = true)]
    benchmark_rules: Option<String>,
    #[arg(long, global = true)]
    include_cg: Option<bool>,
}

fn parse_probe_kind(s: &str) -> Result<ProbeKind> {
    match s {
        "rademacher" => Ok(ProbeKind::Rademacher),
        "gaussian_preconditioned" => Ok(ProbeKind::GaussianPreconditioned),
        other => Err(Error::Config(format!(
            "unknown probe kind '{other}', expected rademacher or gaussian_preconditioned"
        ))),
    }
}

fn parse_family(s: &str) -> Result<KernelFamily> {
    match s {
        "matern52" => Ok(KernelFamily::Matern52),
        "matern32" => Ok(KernelFamily::Matern32),
        "rbf" => Ok(KernelFamily::Rbf),
        other => Err(Error::Config(format!(
            "unknown kernel family '{other}', expected matern52, matern32, or rbf"
        ))),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(p) = &o.precision {
        cfg.precision = p.parse()?;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    // Precedence: flag > environment > config file.
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    if let Some(v) = &o.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = o.deterministic {
        cfg.deterministic = v;
    }

    if let Some(v) = &o.dataset_path {
        cfg.dataset.path = Some(v.clone());
        cfg.dataset.synth = None;
    }
    if o.synth_n.is_some() || o.synth_d.is_some() {
        let mut synth = cfg.dataset.synth.clone().unwrap_or(SynthConfig {
            n: 0,
            d: 0,
            kernel: None,
        });
        if let Some(n) = o.synth_n {
            synth.n = n;
        }
        if let Some(d) = o.synth_d {
            synth.d = d;
        }
        cfg.dataset.synth = Some(synth);
        cfg.dataset.path = None;
    }
    if let Some(v) = o.split_ratio {
        cfg.dataset.split_ratio = v;
    }
    if let Some(v) = o.standardize_features {
        cfg.dataset.standardize_features = v;
    }

    if let Some(v) = &o.kernel_family {
        cfg.kernel.family = parse_family(v)?;
    }
    if let Some(v) = o.lengthscale {
        cfg.kernel.lengthscale = v;
        cfg.kernel.lengthscales = None;
    }
    if let Some(v) = &o.lengthscales {
        let parsed: std::result::Result<Vec<f64>, _> =
            v.split(',').map(|t| t.trim().parse::<f64>()).collect();
        cfg.kernel.lengthscales = Some(parsed.map_err(|_| {
            Error::Config(format!("cannot parse '{v}' as comma-separated lengthscales"))
        })?);
    }
    if let Some(v) = o.outputscale {
        cfg.kernel.outputscale = v;
    }
    if let Some(v) = o.noise_variance {
        cfg.kernel.noise_variance = v;
    }
    if let Some(v) = o.mean_constant {
        cfg.kernel.mean_constant = v;
    }

    if let Some(v) = o.batch_size {
        cfg.partition.batch_size = v;
    }

    if let Some(v) = &o.method {
        cfg.solver.method = v.parse::<SolverMethod>()?;
    }
    if let Some(v) = &o.rule {
        cfg.solver.rule = v.parse::<RuleName>()?;
    }
    if let Some(v) = o.preconditioner_rank {
        cfg.solver.preconditioner_rank = v;
    }
    if let Some(v) = o.block_rows {
        cfg.solver.block_rows = v;
    }

    if let Some(v) = o.train_tolerance {
        cfg.stopping.train_tolerance = v;
    }
    if let Some(v) = o.test_tolerance {
        cfg.stopping.test_tolerance = v;
    }
    if let Some(v) = o.min_epochs {
        cfg.stopping.min_epochs = v;
    }
    if let Some(v) = o.max_epochs {
        cfg.stopping.max_epochs = v;
    }

    if let Some(v) = o.adam_steps {
        cfg.training.adam_steps = v;
    }
    if let Some(v) = o.step_size {
        cfg.training.step_size = v;
    }
    if let Some(v) = o.num_probes {
        cfg.training.num_probes = v;
    }
    if let Some(v) = &o.probe_kind {
        cfg.training.probe_kind = parse_probe_kind(v)?;
    }
    if let Some(v) = o.noise_floor {
        cfg.training.noise_floor = v;
    }

    if let Some(v) = &o.benchmark_rules {
        let rules: Result<Vec<RuleName>> =
            v.split(',').map(|t| t.trim().parse::<RuleName>()).collect();
        cfg.benchmark.rules = rules?;
    }
    if let Some(v) = o.include_cg {
        cfg.benchmark.include_cg = v;
    }
    Ok(())
}

fn dispatch(cfg: &ExperimentConfig, command: &Command) -> Result<bool> {
    match cfg.precision {
        Precision::F64 => dispatch_typed::<f64>(cfg, command),
        Precision::F32 => dispatch_typed::<f32>(cfg, command),
    }
}

fn dispatch_typed<F: apgp::Scalar>(cfg: &ExperimentConfig, command: &Command) -> Result<bool> {
    match command {
        Command::Solve => {
            let summary = cli::run_solver_benchmark::<F>(cfg)?;
            for m in &summary.methods {
                match &m.error {
                    None => println!(
                        "{}: epochs_to_tolerance={} final_avg_rel={:.3e}",
                        m.method,
                        m.epochs_to_tolerance
                            .map_or_else(|| "-".into(), |e| e.to_string()),
                        m.final_avg_rel_residual.unwrap_or(f64::NAN),
                    ),
                    Some(err) => println!("{}: ERROR {err}", m.method),
                }
            }
            Ok(true)
        }
        Command::Train => {
            let metrics = cli::run_training::<F>(cfg)?;
            println!(
                "rmse={:.6} nll={} train_epochs_total={}",
                metrics.rmse,
                metrics
                    .nll
                    .map_or_else(|| "-".into(), |v| format!("{v:.6}")),
                metrics.train_epochs_total
            );
            Ok(true)
        }
        Command::Predict { model, output } => {
            let metrics = cli::run_predict::<F>(cfg, model, output)?;
            println!(
                "rmse={:.6} nll={}",
                metrics.rmse,
                metrics
                    .nll
                    .map_or_else(|| "-".into(), |v| format!("{v:.6}"))
            );
            Ok(true)
        }
        Command::Synth { output } => {
            cli::run_synth::<F>(cfg, output)?;
            println!("wrote {}", output.display());
            Ok(true)
        }
        Command::Check => {
            let report = cli::run_check::<F>(cfg)?;
            Ok(report.passed)
        }
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, &cli.overrides)?;
    cfg.validate()?;
    dispatch(&cfg, &cli.command)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(1)
        }
    }
}
