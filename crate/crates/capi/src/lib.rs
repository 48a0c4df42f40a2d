//! C ABI for the apgp solver library.
//!
//! Conventions:
//! - Handles (`ApgpSpec`, `ApgpGp`) are opaque; create them with the
//!   matching `_new` function and release them with `_free`.
//! - Matrices are row-major `double` buffers; `x` is `n * d`, right-hand
//!   sides are `n * ncols`, outputs are caller-allocated.
//! - Every fallible call returns an [`ApgpStatus`]; on failure,
//!   [`apgp_last_error_message`] returns a thread-local description valid
//!   until the next failing call on the same thread.
//! - All computation runs in f64.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::{Array1, Array2};

use apgp::altproj::{ap_solve, SelectionRule, StoppingCriteria};
use apgp::cg::{cg_solve, pivoted_cholesky};
use apgp::error::Error;
use apgp::gp::{predict_mean, train, ProbeKind, SolverChoice, TrainConfig};
use apgp::kernels::{KernelFamily, KernelSpec};
use apgp::partition::BlockPartition;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApgpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid sizes, non-finite inputs, or malformed arguments.
    InvalidArgument = 2,
    /// A matrix that must be positive definite was not.
    NumericalFailure = 3,
    /// An iterative solver diverged or broke down.
    SolverFailure = 4,
    /// The callee panicked; the handle state is unspecified.
    Panic = 5,
}

/// Kernel families exposed through the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApgpKernelFamily {
    Matern52 = 0,
    Matern32 = 1,
    Rbf = 2,
}

impl From<ApgpKernelFamily> for KernelFamily {
    fn from(f: ApgpKernelFamily) -> Self {
        match f {
            ApgpKernelFamily::Matern52 => KernelFamily::Matern52,
            ApgpKernelFamily::Matern32 => KernelFamily::Matern32,
            ApgpKernelFamily::Rbf => KernelFamily::Rbf,
        }
    }
}

/// Block selection rules for the alternating-projection solver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApgpSelectionRule {
    GaussSouthwell = 0,
    Cyclic = 1,
    Random = 2,
}

/// Which solver backs a training or prediction call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApgpSolverMethod {
    /// Alternating projection; `batch_size` selects the block size.
    AlternatingProjection = 0,
    /// Preconditioned conjugate gradients; `preconditioner_rank` sizes the
    /// pivoted Cholesky preconditioner (0 disables it).
    ConjugateGradients = 1,
}

/// Opaque kernel specification handle.
pub struct ApgpSpec {
    inner: KernelSpec<f64>,
}

/// Opaque Gaussian-process handle owning a copy of the training data.
pub struct ApgpGp {
    spec: KernelSpec<f64>,
    x: Array2<f64>,
    y: Array1<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> =
        RefCell::new(CString::new("").expect("empty string has no NUL"));
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes removed");
    });
}

fn status_for(err: &Error) -> ApgpStatus {
    match err {
        Error::InvalidInput(_)
        | Error::ShapeMismatch(_)
        | Error::IndexOutOfRange(_)
        | Error::Config(_)
        | Error::DataFormat { .. } => ApgpStatus::InvalidArgument,
        Error::NotPositiveDefinite { .. } | Error::BlockNotPositiveDefinite { .. } => {
            ApgpStatus::NumericalFailure
        }
        Error::StaleCache
        | Error::SolverDiverged { .. }
        | Error::CgBreakdown { .. }
        | Error::NonFiniteGradient { .. } => ApgpStatus::SolverFailure,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Toml(_) => {
            ApgpStatus::InvalidArgument
        }
    }
}

fn fail(err: &Error) -> ApgpStatus {
    set_error(&err.to_string());
    status_for(err)
}

/// Run `f`, translating panics into [`ApgpStatus::Panic`].
fn guarded(f: impl FnOnce() -> ApgpStatus) -> ApgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in apgp".to_string());
            set_error(&msg);
            ApgpStatus::Panic
        }
    }
}

/// Library version as a NUL-terminated static string.
#[no_mangle]
pub extern "C" fn apgp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing apgp call on the same thread.
#[no_mangle]
pub extern "C" fn apgp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() && len > 0 {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

fn null_pointer() -> ApgpStatus {
    set_error("null pointer argument");
    ApgpStatus::NullPointer
}

/// Create a kernel specification.
///
/// `lengthscales` holds `num_dims` positive ARD lengthscales. On success
/// `*out` owns the new handle; release it with [`apgp_spec_free`].
///
/// # Safety
/// `lengthscales` must point to `num_dims` doubles and `out` must be a
/// valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn apgp_spec_new(
    family: ApgpKernelFamily,
    lengthscales: *const f64,
    num_dims: usize,
    outputscale: f64,
    noise_variance: f64,
    mean_constant: f64,
    out: *mut *mut ApgpSpec,
) -> ApgpStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer();
        }
        let Some(ls) = (unsafe { slice_arg(lengthscales, num_dims) }) else {
            return null_pointer();
        };
        match KernelSpec::new(
            family.into(),
            Array1::from_iter(ls.iter().copied()),
            outputscale,
            noise_variance,
            mean_constant,
        ) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(ApgpSpec { inner })) };
                ApgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a spec handle. Null is a no-op.
///
/// # Safety
/// `spec` must be null or a pointer returned by [`apgp_spec_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn apgp_spec_free(spec: *mut ApgpSpec) {
    if !spec.is_null() {
        drop(unsafe { Box::from_raw(spec) });
    }
}

#[allow(clippy::too_many_arguments)]
unsafe fn batched_inputs<'a>(
    spec: *const ApgpSpec,
    x: *const f64,
    n: usize,
    d: usize,
    b: *const f64,
    ncols: usize,
    out_weights: *mut f64,
) -> Result<(&'a ApgpSpec, Array2<f64>, Array2<f64>), ApgpStatus> {
    if spec.is_null() || out_weights.is_null() {
        return Err(null_pointer());
    }
    let spec = unsafe { &*spec };
    let Some(xs) = (unsafe { slice_arg(x, n * d) }) else {
        return Err(null_pointer());
    };
    let Some(bs) = (unsafe { slice_arg(b, n * ncols) }) else {
        return Err(null_pointer());
    };
    let x = Array2::from_shape_vec((n, d), xs.to_vec()).expect("sizes match by construction");
    let b = Array2::from_shape_vec((n, ncols), bs.to_vec()).expect("sizes match by construction");
    Ok((spec, x, b))
}

fn write_solution(
    weights: &Array2<f64>,
    trace: &apgp::Trace,
    out_weights: *mut f64,
    out_epochs: *mut usize,
    out_avg_rel_residual: *mut f64,
) {
    let flat: Vec<f64> = weights.iter().copied().collect();
    unsafe {
        std::ptr::copy_nonoverlapping(flat.as_ptr(), out_weights, flat.len());
        if !out_epochs.is_null() {
            *out_epochs = trace.last().map_or(0, |r| r.epoch);
        }
        if !out_avg_rel_residual.is_null() {
            *out_avg_rel_residual = trace.last().map_or(0.0, |r| r.avg_rel_residual);
        }
    }
}

/// Solve `K W = B` by alternating projection.
///
/// `x` is the `n x d` input matrix, `b` the `n x ncols` right-hand sides,
/// `batch_size` the partition block size, `seed` the stream for the random
/// rule. `out_weights` receives the `n x ncols` solution; `out_epochs` and
/// `out_avg_rel_residual` (optional, may be null) receive the epoch count
/// and the final average relative residual.
///
/// # Safety
/// Pointers must reference buffers of the documented sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn apgp_ap_solve(
    spec: *const ApgpSpec,
    x: *const f64,
    n: usize,
    d: usize,
    b: *const f64,
    ncols: usize,
    batch_size: usize,
    rule: ApgpSelectionRule,
    seed: u64,
    tolerance: f64,
    min_epochs: usize,
    max_epochs: usize,
    out_weights: *mut f64,
    out_epochs: *mut usize,
    out_avg_rel_residual: *mut f64,
) -> ApgpStatus {
    guarded(|| {
        let (spec, x, b) =
            match unsafe { batched_inputs(spec, x, n, d, b, ncols, out_weights) } {
                Ok(v) => v,
                Err(status) => return status,
            };
        let run = || -> Result<_, Error> {
            let partition = BlockPartition::new(n, batch_size.clamp(1, n.max(1)))?;
            let stop = StoppingCriteria::new(tolerance, min_epochs, max_epochs)?;
            let rule = match rule {
                ApgpSelectionRule::GaussSouthwell => SelectionRule::GaussSouthwell,
                ApgpSelectionRule::Cyclic => SelectionRule::Cyclic,
                ApgpSelectionRule::Random => SelectionRule::Random { seed },
            };
            ap_solve(&spec.inner, x.view(), b.view(), &partition, rule, &stop)
        };
        match run() {
            Ok(outcome) => {
                write_solution(
                    &outcome.weights,
                    &outcome.trace,
                    out_weights,
                    out_epochs,
                    out_avg_rel_residual,
                );
                ApgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Solve `K W = B` by (preconditioned) conjugate gradients.
/// `preconditioner_rank` = 0 runs plain CG.
///
/// # Safety
/// Pointers must reference buffers of the documented sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn apgp_cg_solve(
    spec: *const ApgpSpec,
    x: *const f64,
    n: usize,
    d: usize,
    b: *const f64,
    ncols: usize,
    preconditioner_rank: usize,
    tolerance: f64,
    min_iters: usize,
    max_iters: usize,
    out_weights: *mut f64,
    out_iters: *mut usize,
    out_avg_rel_residual: *mut f64,
) -> ApgpStatus {
    guarded(|| {
        let (spec, x, b) =
            match unsafe { batched_inputs(spec, x, n, d, b, ncols, out_weights) } {
                Ok(v) => v,
                Err(status) => return status,
            };
        let run = || -> Result<_, Error> {
            let stop = StoppingCriteria::new(tolerance, min_iters, max_iters)?;
            let factor = if preconditioner_rank > 0 {
                Some(pivoted_cholesky(
                    &spec.inner,
                    x.view(),
                    preconditioner_rank.min(n),
                )?)
            } else {
                None
            };
            cg_solve(&spec.inner, x.view(), b.view(), &stop, factor.as_ref(), 256)
        };
        match run() {
            Ok(outcome) => {
                write_solution(
                    &outcome.weights,
                    &outcome.trace,
                    out_weights,
                    out_iters,
                    out_avg_rel_residual,
                );
                ApgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Create a GP handle owning copies of the training inputs (`n x d`,
/// row-major) and labels (`n`), starting from `spec`'s hyperparameters.
///
/// # Safety
/// `x` must hold `n * d` doubles, `y` must hold `n`, and `out` must be a
/// valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn apgp_gp_new(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    spec: *const ApgpSpec,
    out: *mut *mut ApgpGp,
) -> ApgpStatus {
    guarded(|| {
        if spec.is_null() || out.is_null() {
            return null_pointer();
        }
        let Some(xs) = (unsafe { slice_arg(x, n * d) }) else {
            return null_pointer();
        };
        let Some(ys) = (unsafe { slice_arg(y, n) }) else {
            return null_pointer();
        };
        let spec = unsafe { &*spec };
        if spec.inner.dims() != d {
            let e = Error::ShapeMismatch(format!(
                "spec has {} lengthscales but d = {d}",
                spec.inner.dims()
            ));
            return fail(&e);
        }
        let gp = ApgpGp {
            spec: spec.inner.clone(),
            x: Array2::from_shape_vec((n, d), xs.to_vec()).expect("sizes match"),
            y: Array1::from_vec(ys.to_vec()),
        };
        unsafe { *out = Box::into_raw(Box::new(gp)) };
        ApgpStatus::Ok
    })
}

/// Release a GP handle. Null is a no-op.
///
/// # Safety
/// `gp` must be null or an unfreed pointer from [`apgp_gp_new`].
#[no_mangle]
pub unsafe extern "C" fn apgp_gp_free(gp: *mut ApgpGp) {
    if !gp.is_null() {
        drop(unsafe { Box::from_raw(gp) });
    }
}

// Training and prediction through the C API always use the GS rule for
// the alternating-projection path; random/cyclic stay reachable through
// the solver-level entry points.
fn solver_choice(
    method: ApgpSolverMethod,
    batch_size: usize,
    preconditioner_rank: usize,
) -> SolverChoice {
    match method {
        ApgpSolverMethod::AlternatingProjection => SolverChoice::AlternatingProjection {
            batch_size: batch_size.max(1),
            rule: SelectionRule::GaussSouthwell,
        },
        ApgpSolverMethod::ConjugateGradients => SolverChoice::ConjugateGradient {
            preconditioner_rank,
        },
    }
}

/// Train the GP hyperparameters in place with Adam on stochastic MLL
/// gradients (Rademacher probes).
///
/// # Safety
/// `gp` must be a live handle from [`apgp_gp_new`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn apgp_gp_train(
    gp: *mut ApgpGp,
    method: ApgpSolverMethod,
    batch_size: usize,
    preconditioner_rank: usize,
    adam_steps: usize,
    step_size: f64,
    num_probes: usize,
    noise_floor: f64,
    seed: u64,
    tolerance: f64,
    min_epochs: usize,
    max_epochs: usize,
) -> ApgpStatus {
    guarded(|| {
        if gp.is_null() {
            return null_pointer();
        }
        let gp = unsafe { &mut *gp };
        let run = || -> Result<KernelSpec<f64>, Error> {
            let config = TrainConfig {
                steps: adam_steps,
                step_size,
                num_probes,
                probe_kind: ProbeKind::Rademacher,
                solver: solver_choice(method, batch_size, preconditioner_rank),
                stop: StoppingCriteria::new(tolerance, min_epochs, max_epochs)?,
                seed,
                noise_floor,
                panel_rows: 256,
            };
            let (trained, _log) = train(gp.x.view(), gp.y.view(), &gp.spec, &config)?;
            Ok(trained)
        };
        match run() {
            Ok(trained) => {
                gp.spec = trained;
                ApgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Read the current hyperparameters out of a GP handle. `lengthscales`
/// must hold `d` doubles; scalar outputs may be null to skip them.
///
/// # Safety
/// `gp` must be a live handle; `lengthscales`, when non-null, must hold
/// `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn apgp_gp_hyperparameters(
    gp: *const ApgpGp,
    lengthscales: *mut f64,
    outputscale: *mut f64,
    noise_variance: *mut f64,
    mean_constant: *mut f64,
) -> ApgpStatus {
    guarded(|| {
        if gp.is_null() {
            return null_pointer();
        }
        let gp = unsafe { &*gp };
        unsafe {
            if !lengthscales.is_null() {
                for (j, l) in gp.spec.lengthscales().iter().enumerate() {
                    *lengthscales.add(j) = *l;
                }
            }
            if !outputscale.is_null() {
                *outputscale = gp.spec.outputscale();
            }
            if !noise_variance.is_null() {
                *noise_variance = gp.spec.noise_variance();
            }
            if !mean_constant.is_null() {
                *mean_constant = gp.spec.mean_constant();
            }
        }
        ApgpStatus::Ok
    })
}

/// Posterior mean at `m` test points (`x_test` is `m x d`, row-major);
/// `out_means` receives `m` doubles.
///
/// # Safety
/// Pointers must reference buffers of the documented sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn apgp_gp_predict_mean(
    gp: *const ApgpGp,
    x_test: *const f64,
    m: usize,
    method: ApgpSolverMethod,
    batch_size: usize,
    preconditioner_rank: usize,
    tolerance: f64,
    min_epochs: usize,
    max_epochs: usize,
    out_means: *mut f64,
) -> ApgpStatus {
    guarded(|| {
        if gp.is_null() || out_means.is_null() {
            return null_pointer();
        }
        let gp = unsafe { &*gp };
        let d = gp.x.ncols();
        let Some(xt) = (unsafe { slice_arg(x_test, m * d) }) else {
            return null_pointer();
        };
        let x_test = Array2::from_shape_vec((m, d), xt.to_vec()).expect("sizes match");
        let run = || -> Result<Array1<f64>, Error> {
            let stop = StoppingCriteria::new(tolerance, min_epochs, max_epochs)?;
            let (means, _trace) = predict_mean(
                &gp.spec,
                gp.x.view(),
                gp.y.view(),
                x_test.view(),
                &solver_choice(method, batch_size, preconditioner_rank),
                &stop,
                256,
            )?;
            Ok(means)
        };
        match run() {
            Ok(means) => {
                unsafe {
                    std::ptr::copy_nonoverlapping(means.as_ptr(), out_means, m);
                }
                ApgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
