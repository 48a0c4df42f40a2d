//! Exact GP regression: stochastic MLL gradients through batched solves,
//! Adam hyperparameter training, posterior-mean prediction through either
//! solver, and exact (desk-scale) MLL/variance/NLL evaluation.

mod gradient;
mod predict;
mod train;

pub use gradient::{
    exact_mll_gradient, kernel_gradient_block, kernel_gradient_matvec, mll_gradient_estimate,
    HyperParam, MllGradient, SolveSummary,
};
pub use predict::{exact_predict_variance_nll, predict_mean};
pub use train::{train, Adam, TrainConfig, TrainLog, TrainStepRecord};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::altproj::{ap_solve, SelectionRule, SolveOutcome, StoppingCriteria};
use crate::cg::{cg_solve, pivoted_cholesky, PivotedCholeskyFactor};
use crate::error::{Error, Result};
use crate::kernels::{dense_kernel_matrix, KernelSpec};
use crate::linalg::{cholesky_in_place, logdet_from_factor, solve_lower_in_place,
    solve_lower_transpose_in_place};
use crate::partition::BlockPartition;
use crate::scalar::Scalar;

/// Default row-panel height for blocked products outside the solvers.
pub const DEFAULT_PANEL_ROWS: usize = 256;

/// Which solver backs the batched linear solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    AlternatingProjection {
        batch_size: usize,
        rule: SelectionRule,
    },
    ConjugateGradient {
        preconditioner_rank: usize,
    },
}

impl SolverChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SolverChoice::AlternatingProjection { .. } => "alternating_projection",
            SolverChoice::ConjugateGradient { .. } => "conjugate_gradients",
        }
    }
}

/// Run the chosen solver on `K W = B`.
pub fn solve_system<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    b: ArrayView2<F>,
    solver: &SolverChoice,
    stop: &StoppingCriteria,
    panel_rows: usize,
) -> Result<SolveOutcome<F>> {
    match *solver {
        SolverChoice::AlternatingProjection { batch_size, rule } => {
            let partition = BlockPartition::new(x.nrows(), batch_size.min(x.nrows()))?;
            ap_solve(spec, x, b, &partition, rule, stop)
        }
        SolverChoice::ConjugateGradient { preconditioner_rank } => {
            let factor = if preconditioner_rank > 0 {
                Some(pivoted_cholesky(spec, x, preconditioner_rank.min(x.nrows()))?)
            } else {
                None
            };
            cg_solve(spec, x, b, stop, factor.as_ref(), panel_rows)
        }
    }
}

/// Distribution of the stochastic trace probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Entries are +-1 with equal probability.
    Rademacher,
    /// `N(0, P)` with `P = L L^T + sigma^2 I` the CG preconditioner; keeps
    /// the estimator unbiased while shaping its variance.
    GaussianPreconditioned,
}

/// Right-hand-side block `B = [y - mu, z_1, ..., z_l]` for one gradient
/// evaluation: the centered labels plus `l` i.i.d. trace probes.
#[derive(Debug, Clone)]
pub struct TraceProbeSet<F: Scalar> {
    b: Array2<F>,
    probe_kind: ProbeKind,
    seed: u64,
    mean_constant: F,
}

impl<F: Scalar> TraceProbeSet<F> {
    pub fn rademacher(y: ArrayView1<F>, mean_constant: F, num_probes: usize, seed: u64) -> Self {
        let n = y.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Array2::zeros((n, num_probes + 1));
        for (i, &yi) in y.iter().enumerate() {
            b[(i, 0)] = yi - mean_constant;
        }
        for j in 1..=num_probes {
            for i in 0..n {
                b[(i, j)] = F::rademacher(&mut rng);
            }
        }
        Self {
            b,
            probe_kind: ProbeKind::Rademacher,
            seed,
            mean_constant,
        }
    }

    /// Probes `z = L u + sigma e` with `u, e` standard normal, so
    /// `E[z z^T] = L L^T + sigma^2 I`.
    pub fn gaussian_preconditioned(
        y: ArrayView1<F>,
        mean_constant: F,
        num_probes: usize,
        factor: &PivotedCholeskyFactor<F>,
        sigma2: F,
        seed: u64,
    ) -> Result<Self> {
        if factor.n() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "preconditioner covers {} points but labels have {}",
                factor.n(),
                y.len()
            )));
        }
        if !(sigma2 > F::zero()) {
            return Err(Error::InvalidInput(
                "preconditioned probes need positive noise".into(),
            ));
        }
        let n = y.len();
        let k = factor.rank();
        let sigma = sigma2.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Array2::zeros((n, num_probes + 1));
        for (i, &yi) in y.iter().enumerate() {
            b[(i, 0)] = yi - mean_constant;
        }
        for j in 1..=num_probes {
            let u: Array2<F> =
                Array2::from_shape_fn((k, 1), |_| F::standard_normal(&mut rng));
            let lu = factor.l().dot(&u);
            for i in 0..n {
                b[(i, j)] = lu[(i, 0)] + sigma * F::standard_normal(&mut rng);
            }
        }
        Ok(Self {
            b,
            probe_kind: ProbeKind::GaussianPreconditioned,
            seed,
            mean_constant,
        })
    }

    /// The full right-hand-side matrix, labels column first.
    pub fn matrix(&self) -> &Array2<F> {
        &self.b
    }

    pub fn num_probes(&self) -> usize {
        self.b.ncols() - 1
    }

    pub fn probe_kind(&self) -> ProbeKind {
        self.probe_kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_constant(&self) -> F {
        self.mean_constant
    }
}

/// Exact negative marginal log likelihood through a dense Cholesky
/// factorization, `1/2 [(y-mu)^T K^{-1} (y-mu) + log det K + n log 2 pi]`.
/// Evaluation/oracle path: cost is cubic in `n`.
pub fn exact_mll<F: Scalar>(spec: &KernelSpec<F>, x: ArrayView2<F>, y: ArrayView1<F>) -> Result<F> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} inputs",
            y.len(),
            n
        )));
    }
    let mut l = dense_kernel_matrix(spec, x)?;
    cholesky_in_place(&mut l)?;
    let mu = spec.mean_constant();
    let mut alpha = Array2::zeros((n, 1));
    for (i, &yi) in y.iter().enumerate() {
        alpha[(i, 0)] = yi - mu;
    }
    let centered = alpha.clone();
    solve_lower_in_place(&l, &mut alpha);
    solve_lower_transpose_in_place(&l, &mut alpha);
    let quad: F = centered
        .column(0)
        .iter()
        .zip(alpha.column(0).iter())
        .map(|(&c, &a)| c * a)
        .sum();
    let logdet = logdet_from_factor(&l);
    let two_pi = F::cast(std::f64::consts::TAU);
    Ok(F::cast(0.5) * (quad + logdet + F::cast(n as f64) * two_pi.ln()))
}
