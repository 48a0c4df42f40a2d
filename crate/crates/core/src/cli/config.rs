//! Experiment configuration: one TOML file, schema-validated (unknown keys
//! rejected), every default matching the coarse-solve training protocol.
//! Command-line flags mirror the leaf keys one-to-one.

use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use crate::altproj::{SelectionRule, StoppingCriteria};
use crate::error::{Error, Result};
use crate::gp::{ProbeKind, SolverChoice};
use crate::kernels::{KernelFamily, KernelSpecValues, DEFAULT_NOISE_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!(
                "unknown precision '{other}', expected f32 or f64"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    Ap,
    Cg,
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" => Ok(SolverMethod::Ap),
            "cg" => Ok(SolverMethod::Cg),
            other => Err(Error::Config(format!(
                "unknown solver method '{other}', expected ap or cg"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    #[default]
    GaussSouthwell,
    Cyclic,
    Random,
}

impl RuleName {
    pub fn to_rule(self, seed: u64) -> SelectionRule {
        match self {
            RuleName::GaussSouthwell => SelectionRule::GaussSouthwell,
            RuleName::Cyclic => SelectionRule::Cyclic,
            // Decorrelate the block stream from other seeded streams.
            RuleName::Random => SelectionRule::Random {
                seed: seed ^ 0xb5ad_4ece_da1c_e2a9,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleName::GaussSouthwell => "gauss_southwell",
            RuleName::Cyclic => "cyclic",
            RuleName::Random => "random",
        }
    }
}

impl std::str::FromStr for RuleName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss_southwell" | "gs" => Ok(RuleName::GaussSouthwell),
            "cyclic" => Ok(RuleName::Cyclic),
            "random" => Ok(RuleName::Random),
            other => Err(Error::Config(format!(
                "unknown selection rule '{other}', expected gauss_southwell, cyclic, or random"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// CSV path: header row, features in all but the last column.
    pub path: Option<PathBuf>,
    /// Synthetic GP-draw generator; mutually exclusive with `path`.
    pub synth: Option<SynthConfig>,
    pub split_ratio: f64,
    pub standardize_features: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            synth: None,
            split_ratio: 0.8,
            standardize_features: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    /// Generator kernel; defaults to the top-level `[kernel]` section.
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Isotropic lengthscale, broadcast over all dimensions.
    pub lengthscale: f64,
    /// Full ARD vector; overrides `lengthscale` when present.
    pub lengthscales: Option<Vec<f64>>,
    pub outputscale: f64,
    pub noise_variance: f64,
    pub mean_constant: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            lengthscale: 1.0,
            lengthscales: None,
            outputscale: 1.0,
            noise_variance: 1.0,
            mean_constant: 0.0,
        }
    }
}

impl KernelConfig {
    pub fn to_values(&self, dims: usize) -> Result<KernelSpecValues> {
        let lengthscales = match &self.lengthscales {
            Some(ls) => {
                if ls.len() != dims {
                    return Err(Error::Config(format!(
                        "kernel.lengthscales has {} entries but the data has {dims} features",
                        ls.len()
                    )));
                }
                ls.clone()
            }
            None => vec![self.lengthscale; dims],
        };
        Ok(KernelSpecValues {
            family: self.family,
            lengthscales,
            outputscale: self.outputscale,
            noise_variance: self.noise_variance,
            mean_constant: self.mean_constant,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub batch_size: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { batch_size: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub rule: RuleName,
    pub preconditioner_rank: usize,
    pub block_rows: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Ap,
            rule: RuleName::GaussSouthwell,
            preconditioner_rank: 100,
            block_rows: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingConfig {
    pub train_tolerance: f64,
    pub test_tolerance: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            train_tolerance: 1.0,
            test_tolerance: 0.01,
            min_epochs: 11,
            max_epochs: 1000,
        }
    }
}

impl StoppingConfig {
    pub fn train(&self) -> Result<StoppingCriteria> {
        StoppingCriteria::new(self.train_tolerance, self.min_epochs, self.max_epochs)
    }

    pub fn test(&self) -> Result<StoppingCriteria> {
        StoppingCriteria::new(self.test_tolerance, self.min_epochs, self.max_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub adam_steps: usize,
    pub step_size: f64,
    pub num_probes: usize,
    pub probe_kind: ProbeKind,
    pub noise_floor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adam_steps: 50,
            step_size: 0.1,
            num_probes: 15,
            probe_kind: ProbeKind::Rademacher,
            noise_floor: DEFAULT_NOISE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Selection rules compared by `solve`.
    pub rules: Vec<RuleName>,
    pub include_cg: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            rules: vec![RuleName::GaussSouthwell, RuleName::Cyclic, RuleName::Random],
            include_cg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub precision: Precision,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Zero out wall-clock fields in every artifact so that identical
    /// configs reproduce byte-identical outputs.
    pub deterministic: bool,
    pub dataset: DatasetConfig,
    pub kernel: KernelConfig,
    pub partition: PartitionConfig,
    pub solver: SolverConfig,
    pub stopping: StoppingConfig,
    pub training: TrainingConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            precision: Precision::F64,
            seed: 0,
            output_dir: PathBuf::from("out"),
            deterministic: false,
            dataset: DatasetConfig::default(),
            kernel: KernelConfig::default(),
            partition: PartitionConfig::default(),
            solver: SolverConfig::default(),
            stopping: StoppingConfig::default(),
            training: TrainingConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.is_some() && self.dataset.synth.is_some() {
            return Err(Error::Config(
                "dataset.path and dataset.synth are mutually exclusive".into(),
            ));
        }
        if self.dataset.path.is_none() && self.dataset.synth.is_none() {
            return Err(Error::Config(
                "one of dataset.path or dataset.synth is required".into(),
            ));
        }
        if let Some(synth) = &self.dataset.synth {
            if synth.n < 2 || synth.d == 0 {
                return Err(Error::Config(format!(
                    "dataset.synth needs n >= 2 and d >= 1, got n={}, d={}",
                    synth.n, synth.d
                )));
            }
        }
        if !(self.dataset.split_ratio > 0.0 && self.dataset.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "dataset.split_ratio must be in (0, 1), got {}",
                self.dataset.split_ratio
            )));
        }
        if self.partition.batch_size == 0 {
            return Err(Error::Config("partition.batch_size must be positive".into()));
        }
        if self.solver.block_rows == 0 {
            return Err(Error::Config("solver.block_rows must be positive".into()));
        }
        self.stopping.train()?;
        self.stopping.test()?;
        if self.training.num_probes == 0 {
            return Err(Error::Config("training.num_probes must be positive".into()));
        }
        Ok(())
    }

    /// Solver selection resolved against the partition/seed settings.
    pub fn solver_choice(&self) -> SolverChoice {
        match self.solver.method {
            SolverMethod::Ap => SolverChoice::AlternatingProjection {
                batch_size: self.partition.batch_size,
                rule: self.solver.rule.to_rule(self.seed),
            },
            SolverMethod::Cg => SolverChoice::ConjugateGradient {
                preconditioner_rank: self.solver.preconditioner_rank,
            },
        }
    }

    /// Stable hash of the effective configuration, for the run manifest.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut h = DefaultHasher::new();
        canonical.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}
