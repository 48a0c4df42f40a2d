//! Posterior-mean prediction through either solver, and exact predictive
//! variance / NLL at desk scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::altproj::StoppingCriteria;
use crate::error::{Error, Result};
use crate::kernels::{dense_kernel_matrix, kernel_cross, KernelSpec};
use crate::linalg::{cholesky_in_place, solve_lower_in_place};
use crate::scalar::Scalar;
use crate::trace::Trace;

use super::{solve_system, SolverChoice};

/// Posterior mean `mu + K[*, train] K^{-1} (y - mu)`: one single-column
/// solve, then blocked cross-kernel panels (the cross-covariance carries no
/// noise term; test points are treated as distinct from training points).
pub fn predict_mean<F: Scalar>(
    spec: &KernelSpec<F>,
    x_train: ArrayView2<F>,
    y_train: ArrayView1<F>,
    x_test: ArrayView2<F>,
    solver: &SolverChoice,
    stop: &StoppingCriteria,
    panel_rows: usize,
) -> Result<(Array1<F>, Trace)> {
    let n = x_train.nrows();
    if y_train.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} training inputs",
            y_train.len(),
            n
        )));
    }
    if panel_rows == 0 {
        return Err(Error::InvalidInput("panel_rows must be positive".into()));
    }
    let mu = spec.mean_constant();
    let mut b = Array2::zeros((n, 1));
    for (i, &yi) in y_train.iter().enumerate() {
        b[(i, 0)] = yi - mu;
    }
    let outcome = solve_system(spec, x_train, b.view(), solver, stop, panel_rows)?;
    let w = outcome.weights;

    let m = x_test.nrows();
    let mut means = Array1::from_elem(m, mu);
    let mut row = 0;
    for panel in x_test.axis_chunks_iter(Axis(0), panel_rows) {
        let cross = kernel_cross(spec, panel, x_train)?;
        let mp = cross.dot(&w);
        for v in mp.column(0) {
            means[row] = mu + *v;
            row += 1;
        }
    }
    Ok((means, outcome.trace))
}

/// Exact diagonal predictive variances (including the observational noise)
/// and mean per-point Gaussian NLL, via a dense factorization of the
/// training kernel. Desk-scale evaluation path.
pub fn exact_predict_variance_nll<F: Scalar>(
    spec: &KernelSpec<F>,
    x_train: ArrayView2<F>,
    x_test: ArrayView2<F>,
    y_test: ArrayView1<F>,
    means: ArrayView1<F>,
) -> Result<(Array1<F>, f64)> {
    let m = x_test.nrows();
    if y_test.len() != m || means.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} test inputs vs {} labels and {} means",
            m,
            y_test.len(),
            means.len()
        )));
    }
    let mut l = dense_kernel_matrix(spec, x_train)?;
    cholesky_in_place(&mut l)?;
    // V = L^{-1} K[train, test]; columns give the explained variance.
    let mut v = kernel_cross(spec, x_train, x_test)?;
    solve_lower_in_place(&l, &mut v);

    let prior = spec.outputscale() + spec.noise_variance();
    let neg_tol = F::cast(1e-6 * F::TOL_SCALE);
    let clamp = F::cast(1e-12);
    let mut variances = Array1::zeros(m);
    for i in 0..m {
        let explained: F = v.column(i).iter().map(|&z| z * z).sum();
        let var = prior - explained;
        if var < -neg_tol {
            return Err(Error::InvalidInput(format!(
                "predictive variance {var} at test point {i} is negative beyond tolerance; \
                 the training solve is inconsistent"
            )));
        }
        variances[i] = var.max(clamp);
    }

    let mut nll = 0.0;
    for i in 0..m {
        let var = variances[i].as_f64();
        let resid = y_test[i].as_f64() - means[i].as_f64();
        nll += 0.5 * ((std::f64::consts::TAU * var).ln() + resid * resid / var);
    }
    Ok((variances, nll / m as f64))
}
