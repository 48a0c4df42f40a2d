//! Exact Gaussian-process regression on dense kernel systems, built around
//! a blocked alternating-projection solver with a preconditioned
//! conjugate-gradients baseline.
//!
//! The solvers access the kernel matrix lazily in `O(n b)` panels, keep a
//! cache of per-block Cholesky factors, and share one stopping criterion
//! (average relative residual across right-hand sides) and one trace
//! format (epochs, residuals, FLOPs).

pub mod altproj;
pub mod cg;
pub mod cli;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod partition;
pub mod scalar;
pub mod trace;

pub use altproj::{
    ap_inner_step, ap_solve, bcd_step_oracle, epoch_flops, quadratic_objective, BlockSelector,
    SelectionRule, SolveOutcome, SolveState, StoppingCriteria,
};
pub use cg::{cg_solve, pivoted_cholesky, pivoted_cholesky_of, precond_solve, PivotedCholeskyFactor};
pub use data::{load_dataset, standardize_split, synth_dataset, synth_raw, Dataset};
pub use error::{Error, Result};
pub use gp::{
    exact_mll, exact_mll_gradient, exact_predict_variance_nll, kernel_gradient_block,
    mll_gradient_estimate, predict_mean, train, HyperParam, MllGradient, ProbeKind, SolverChoice,
    TraceProbeSet, TrainConfig, TrainLog,
};
pub use kernels::{
    dense_kernel_matrix, kernel_block, kernel_matvec, kernel_value, KernelFamily, KernelSpec,
    KernelSpecValues,
};
pub use partition::{block_solve, build_cache, BlockPartition, CholeskyCache};
pub use scalar::Scalar;
pub use trace::{EpochRecord, Trace};
