//! Hyperparameter training: Adam on softplus-reparameterized parameters,
//! one batched solve and one stochastic gradient per step, Cholesky cache
//! and preconditioner rebuilt every step.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

use crate::altproj::StoppingCriteria;
use crate::cg::pivoted_cholesky;
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, KernelSpecValues, DEFAULT_NOISE_FLOOR};
use crate::scalar::Scalar;

use super::gradient::mll_gradient_estimate;
use super::{ProbeKind, SolverChoice, TraceProbeSet, DEFAULT_PANEL_ROWS};

/// Stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained view of the hyperparameters. Positive quantities go
/// through softplus; the noise is shifted by the floor so the constraint
/// `sigma^2 >= noise_floor` holds for every raw value.
#[derive(Debug, Clone)]
struct RawParams {
    family: crate::kernels::KernelFamily,
    mean: f64,
    lengthscales: Vec<f64>,
    outputscale: f64,
    noise: f64,
    noise_floor: f64,
}

impl RawParams {
    fn from_values(v: &KernelSpecValues, noise_floor: f64) -> Self {
        // Clamp keeps softplus_inv finite when a value starts at its bound.
        let floor_excess = (v.noise_variance - noise_floor).max(1e-12);
        Self {
            family: v.family,
            mean: v.mean_constant,
            lengthscales: v
                .lengthscales
                .iter()
                .map(|&l| softplus_inv(l.max(1e-12)))
                .collect(),
            outputscale: softplus_inv(v.outputscale.max(1e-12)),
            noise: softplus_inv(floor_excess),
            noise_floor,
        }
    }

    fn to_values(&self) -> KernelSpecValues {
        KernelSpecValues {
            family: self.family,
            lengthscales: self.lengthscales.iter().map(|&r| softplus(r)).collect(),
            outputscale: softplus(self.outputscale),
            noise_variance: self.noise_floor + softplus(self.noise),
            mean_constant: self.mean,
        }
    }

    /// Flat layout `[mean, lengthscales.., outputscale, noise]`.
    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lengthscales.len() + 3);
        v.push(self.mean);
        v.extend_from_slice(&self.lengthscales);
        v.push(self.outputscale);
        v.push(self.noise);
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let d = self.lengthscales.len();
        debug_assert_eq!(flat.len(), d + 3);
        self.mean = flat[0];
        self.lengthscales.copy_from_slice(&flat[1..=d]);
        self.outputscale = flat[d + 1];
        self.noise = flat[d + 2];
    }

    /// `d(constrained)/d(raw)` per flat parameter.
    fn chain(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lengthscales.len() + 3);
        v.push(1.0);
        v.extend(self.lengthscales.iter().map(|&r| sigmoid(r)));
        v.push(sigmoid(self.outputscale));
        v.push(sigmoid(self.noise));
        v
    }
}

/// Adam with bias correction, beta = (0.9, 0.999), eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    step_size: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(step_size: f64, dim: usize) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Training setup; the defaults mirror the usual coarse-solve protocol:
/// 50 Adam steps of size 0.1, 15 trace probes, training tolerance 1.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub step_size: f64,
    pub num_probes: usize,
    pub probe_kind: ProbeKind,
    pub solver: SolverChoice,
    pub stop: StoppingCriteria,
    pub seed: u64,
    pub noise_floor: f64,
    pub panel_rows: usize,
}

impl TrainConfig {
    pub fn new(solver: SolverChoice) -> Self {
        Self {
            steps: 50,
            step_size: 0.1,
            num_probes: 15,
            probe_kind: ProbeKind::Rademacher,
            solver,
            stop: StoppingCriteria::training(),
            seed: 0,
            noise_floor: DEFAULT_NOISE_FLOOR,
            panel_rows: DEFAULT_PANEL_ROWS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_probes == 0 {
            return Err(Error::Config("at least one trace probe is required".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if self.noise_floor < 0.0 {
            return Err(Error::Config("noise floor must be non-negative".into()));
        }
        if self.panel_rows == 0 {
            return Err(Error::Config("panel_rows must be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step in the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainStepRecord {
    pub step: usize,
    pub hyperparameters: KernelSpecValues,
    pub solver_epochs_or_iters: usize,
    pub avg_rel_residual_at_stop: f64,
    pub cumulative_flops: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<TrainStepRecord>,
}

impl TrainLog {
    /// JSON-lines export, one record per optimizer step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn zero_wall_times(&mut self) {
        for r in &mut self.records {
            r.wall_time_s = 0.0;
        }
    }
}

/// Train the hyperparameters on `(x, y)` (already standardized): each step
/// resamples probes, rebuilds the block cache or preconditioner, runs one
/// batched solve, assembles the stochastic gradient, and applies Adam in
/// the unconstrained space.
pub fn train<F: Scalar>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    init: &KernelSpec<F>,
    config: &TrainConfig,
) -> Result<(KernelSpec<F>, TrainLog)> {
    config.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} inputs",
            y.len(),
            x.nrows()
        )));
    }
    let mut raw = RawParams::from_values(&KernelSpecValues::from(init), config.noise_floor);
    let mut adam = Adam::new(config.step_size, raw.flat().len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut cumulative_flops = 0u64;

    for step in 1..=config.steps {
        let spec: KernelSpec<F> = raw.to_values().to_spec()?;
        let probe_seed = rng.gen::<u64>();
        let probes = match config.probe_kind {
            ProbeKind::Rademacher => TraceProbeSet::rademacher(
                y,
                spec.mean_constant(),
                config.num_probes,
                probe_seed,
            ),
            ProbeKind::GaussianPreconditioned => {
                let rank = match config.solver {
                    SolverChoice::ConjugateGradient { preconditioner_rank }
                        if preconditioner_rank > 0 =>
                    {
                        preconditioner_rank.min(x.nrows())
                    }
                    _ => {
                        return Err(Error::Config(
                            "gaussian_preconditioned probes require the conjugate-gradients \
                             solver with a positive preconditioner rank"
                                .into(),
                        ))
                    }
                };
                let factor = pivoted_cholesky(&spec, x, rank)?;
                TraceProbeSet::gaussian_preconditioned(
                    y,
                    spec.mean_constant(),
                    config.num_probes,
                    &factor,
                    spec.noise_variance(),
                    probe_seed,
                )?
            }
        };
        let (grad, summary) = mll_gradient_estimate(
            &spec,
            x,
            &probes,
            &config.solver,
            &config.stop,
            config.panel_rows,
        )?;
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                step,
                log: Box::new(log),
            });
        }
        let chain = raw.chain();
        let raw_grad: Vec<f64> = grad
            .to_vec()
            .iter()
            .zip(&chain)
            .map(|(g, c)| g.as_f64() * c)
            .collect();
        let mut flat = raw.flat();
        adam.step(&mut flat, &raw_grad);
        raw.set_flat(&flat);

        cumulative_flops += summary.flops;
        log.records.push(TrainStepRecord {
            step,
            hyperparameters: raw.to_values(),
            solver_epochs_or_iters: summary.epochs_or_iters,
            avg_rel_residual_at_stop: summary.avg_rel_residual_at_stop,
            cumulative_flops,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }

    Ok((raw.to_values().to_spec()?, log))
}
