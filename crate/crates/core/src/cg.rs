//! Batched (preconditioned) conjugate gradients on kernel systems, plus the
//! greedy rank-k pivoted Cholesky preconditioner.
//!
//! The preconditioner factors the noise-free base kernel and is applied as
//! `P = L L^T + sigma^2 I`, so a full-rank factor makes `P` equal to `K`
//! and PCG converges in one iteration.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use std::time::Instant;

use crate::altproj::StoppingCriteria;
use crate::error::{Error, Result};
use crate::kernels::{kernel_columns, kernel_matvec, KernelSpec};
use crate::linalg::{cholesky_in_place, solve_lower_in_place, solve_lower_transpose_in_place};
use crate::scalar::Scalar;
use crate::trace::{column_norms, residual_summary, EpochRecord, Trace};

/// Rank-k partial Cholesky factor with greedy diagonal pivoting.
/// `rank` can come out smaller than requested when the residual diagonal
/// is numerically exhausted.
#[derive(Debug, Clone)]
pub struct PivotedCholeskyFactor<F: Scalar> {
    l: Array2<F>,
    pivots: Vec<usize>,
    rank: usize,
}

impl<F: Scalar> PivotedCholeskyFactor<F> {
    /// The `n x rank` factor.
    pub fn l(&self) -> &Array2<F> {
        &self.l
    }

    /// Greedy pivot order, one index per factor column.
    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    /// Rank-0 factor: the preconditioner degenerates to `sigma^2 I`.
    pub fn empty(n: usize) -> Self {
        Self {
            l: Array2::zeros((n, 0)),
            pivots: Vec::new(),
            rank: 0,
        }
    }
}

fn pivoted_cholesky_impl<F: Scalar>(
    mut diag: Vec<F>,
    mut column: impl FnMut(usize) -> Array1<F>,
    k: usize,
) -> Result<PivotedCholeskyFactor<F>> {
    let n = diag.len();
    let scale = diag
        .iter()
        .fold(F::one(), |acc, &d| acc.max(d.abs()));
    let neg_tol = F::cast(1e-8 * F::TOL_SCALE) * scale;
    let drop_tol = F::cast(1e-12 * F::TOL_SCALE) * scale;

    let mut l = Array2::<F>::zeros((n, k));
    let mut pivots = Vec::with_capacity(k);
    let mut rank = 0;
    for j in 0..k {
        let mut p = 0;
        let mut dmax = F::neg_infinity();
        for (i, &d) in diag.iter().enumerate() {
            if d > dmax {
                dmax = d;
                p = i;
            }
        }
        if dmax < -neg_tol {
            return Err(Error::NotPositiveDefinite {
                context: format!("pivoted Cholesky residual diagonal {dmax} at index {p}"),
            });
        }
        if dmax <= drop_tol {
            break; // numerically exhausted, PSD rank reached
        }
        let ljj = dmax.sqrt();
        let mut col = column(p);
        for t in 0..j {
            let lpt = l[(p, t)];
            if lpt != F::zero() {
                let lt = l.column(t).to_owned();
                col.zip_mut_with(&lt, |c, &v| *c = *c - lpt * v);
            }
        }
        {
            let mut lj = l.column_mut(j);
            lj.zip_mut_with(&col, |o, &c| *o = c / ljj);
            lj[p] = ljj;
        }
        for i in 0..n {
            let lij = l[(i, j)];
            diag[i] = diag[i] - lij * lij;
        }
        diag[p] = F::zero();
        pivots.push(p);
        rank = j + 1;
    }
    let l = if rank < k {
        l.slice_axis(Axis(1), (0..rank).into()).to_owned()
    } else {
        l
    };
    Ok(PivotedCholeskyFactor { l, pivots, rank })
}

/// Greedy pivoted Cholesky of the noise-free kernel matrix, touching only
/// `k` kernel columns: `O(n k^2)` time, `O(n k)` memory.
pub fn pivoted_cholesky<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    k: usize,
) -> Result<PivotedCholeskyFactor<F>> {
    let n = x.nrows();
    if k > n {
        return Err(Error::InvalidInput(format!(
            "preconditioner rank {k} exceeds the number of points {n}"
        )));
    }
    if k == 0 {
        return Ok(PivotedCholeskyFactor::empty(n));
    }
    let base = spec.with_noise_variance(F::zero())?;
    let diag = vec![spec.outputscale(); n];
    pivoted_cholesky_impl(diag, |p| {
        kernel_columns(&base, x, &[p])
            .expect("column indices are in range")
            .column(0)
            .to_owned()
    }, k)
}

/// Greedy pivoted Cholesky of an explicit symmetric matrix; the dense
/// verification path for the kernel-backed builder.
pub fn pivoted_cholesky_of<F: Scalar>(
    a: ArrayView2<F>,
    k: usize,
) -> Result<PivotedCholeskyFactor<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(
            "pivoted Cholesky needs a square matrix".into(),
        ));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "rank {k} exceeds matrix size {n}"
        )));
    }
    let diag: Vec<F> = a.diag().iter().copied().collect();
    pivoted_cholesky_impl(diag, |p| a.column(p).to_owned(), k)
}

/// Apply `P^{-1} = (L L^T + sigma^2 I)^{-1}` to `v` via the rank-k
/// Woodbury identity in `O(n k^2 + n k l)` time.
pub fn precond_solve<F: Scalar>(
    factor: &PivotedCholeskyFactor<F>,
    sigma2: F,
    v: ArrayView2<F>,
) -> Result<Array2<F>> {
    if !(sigma2 > F::zero()) {
        return Err(Error::InvalidInput(format!(
            "preconditioner noise must be positive, got {sigma2}"
        )));
    }
    if v.nrows() != factor.n() {
        return Err(Error::ShapeMismatch(format!(
            "operand has {} rows but the factor covers {}",
            v.nrows(),
            factor.n()
        )));
    }
    if factor.rank() == 0 {
        return Ok(v.to_owned() / sigma2);
    }
    let l = &factor.l;
    let ltv = l.t().dot(&v);
    let mut inner = l.t().dot(l);
    for i in 0..factor.rank() {
        inner[(i, i)] = inner[(i, i)] + sigma2;
    }
    cholesky_in_place(&mut inner).map_err(|_| Error::NotPositiveDefinite {
        context: "preconditioner inner system".into(),
    })?;
    let mut t = ltv;
    solve_lower_in_place(&inner, &mut t);
    solve_lower_transpose_in_place(&inner, &mut t);
    Ok((&v - &l.dot(&t)) / sigma2)
}

/// Internal state of a batched CG run: weights, residuals, search
/// directions, and preconditioned residuals, one column per RHS.
#[derive(Debug, Clone)]
pub struct CgState<F: Scalar> {
    pub w: Array2<F>,
    pub r: Array2<F>,
    pub direction: Array2<F>,
    pub z: Array2<F>,
    pub rz: Vec<F>,
    pub iteration: usize,
    pub flops: u64,
    pub trace: Trace,
}

/// Batched preconditioned conjugate gradients with per-column step sizes
/// and a shared matrix-free matvec. Stops on the same averaged relative
/// residual criterion as the alternating-projection solver; each iteration
/// is charged `2 n^2 l` FLOPs.
pub fn cg_solve<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    b: ArrayView2<F>,
    stop: &StoppingCriteria,
    preconditioner: Option<&PivotedCholeskyFactor<F>>,
    block_rows: usize,
) -> Result<crate::altproj::SolveOutcome<F>> {
    let n = x.nrows();
    if b.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} rows but inputs have {}",
            b.nrows(),
            n
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "right-hand side contains non-finite entries".into(),
        ));
    }
    let ncols = b.ncols();
    let start = Instant::now();
    let b_norms = column_norms(b);

    let apply_precond = |r: &Array2<F>| -> Result<Array2<F>> {
        match preconditioner {
            Some(f) => precond_solve(f, spec.noise_variance(), r.view()),
            None => Ok(r.clone()),
        }
    };

    let r = b.to_owned();
    let z = apply_precond(&r)?;
    let rz: Vec<F> = (0..ncols)
        .map(|i| r.column(i).dot(&z.column(i)))
        .collect();
    let mut st = CgState {
        w: Array2::zeros((n, ncols)),
        direction: z.clone(),
        z,
        r,
        rz,
        iteration: 0,
        flops: 0,
        trace: Trace::new(),
    };

    let (avg0, frob0) = residual_summary(st.r.view(), &b_norms);
    st.trace.push(EpochRecord {
        epoch: 0,
        inner_iters: 0,
        avg_rel_residual: avg0,
        frobenius_residual: frob0,
        cumulative_flops: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
    });

    let mut converged = false;
    for iter in 1..=stop.max_epochs {
        let q = kernel_matvec(spec, x, st.direction.view(), block_rows)?;
        let mut alphas = vec![F::zero(); ncols];
        for i in 0..ncols {
            if st.rz[i] == F::zero() {
                continue; // column already converged
            }
            let dq = st.direction.column(i).dot(&q.column(i));
            if !(dq > F::zero()) {
                return Err(Error::CgBreakdown {
                    iteration: iter,
                    column: i,
                    trace: Box::new(st.trace.clone()),
                });
            }
            alphas[i] = st.rz[i] / dq;
        }
        for i in 0..ncols {
            let a = alphas[i];
            if a == F::zero() {
                continue;
            }
            let d = st.direction.column(i).to_owned();
            st.w.column_mut(i).zip_mut_with(&d, |w, &v| *w = *w + a * v);
            let qc = q.column(i).to_owned();
            st.r.column_mut(i).zip_mut_with(&qc, |r, &v| *r = *r - a * v);
        }
        st.z = apply_precond(&st.r)?;
        for i in 0..ncols {
            let rz_new = st.r.column(i).dot(&st.z.column(i));
            let beta = if st.rz[i] == F::zero() {
                F::zero()
            } else {
                rz_new / st.rz[i]
            };
            let zc = st.z.column(i).to_owned();
            let mut dc = st.direction.column_mut(i);
            dc.zip_mut_with(&zc, |d, &z| *d = z + beta * *d);
            st.rz[i] = rz_new;
        }
        st.iteration = iter;
        st.flops += 2 * (n as u64) * (n as u64) * (ncols as u64);

        let (avg_rel, frob) = residual_summary(st.r.view(), &b_norms);
        st.trace.push(EpochRecord {
            epoch: iter,
            inner_iters: iter,
            avg_rel_residual: avg_rel,
            frobenius_residual: frob,
            cumulative_flops: st.flops,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if !avg_rel.is_finite() || !frob.is_finite() {
            return Err(Error::SolverDiverged {
                solver: "conjugate gradients",
                epoch: iter,
                trace: Box::new(st.trace.clone()),
            });
        }
        if avg_rel < stop.tolerance && iter >= stop.min_epochs {
            converged = true;
            break;
        }
    }

    Ok(crate::altproj::SolveOutcome {
        weights: st.w,
        trace: st.trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dense_kernel_matrix, KernelFamily};
    use crate::linalg::frobenius_norm;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen::<f64>())
    }

    fn short_scale_spec(d: usize, noise: f64) -> KernelSpec<f64> {
        KernelSpec::isotropic(KernelFamily::Matern52, d, 0.3, 1.0, noise, 0.0).unwrap()
    }

    #[test]
    fn pivoted_cholesky_of_diagonal_picks_largest_first() {
        let a = array![[4.0, 0.0], [0.0, 1.0]];
        let f = pivoted_cholesky_of(a.view(), 1).unwrap();
        assert_eq!(f.pivots(), &[0]);
        assert_eq!(f.rank(), 1);
        assert_eq!(f.l()[(0, 0)], 2.0);
        assert_eq!(f.l()[(1, 0)], 0.0);
    }

    #[test]
    fn pivot_order_follows_residual_diagonal() {
        let a = Array2::from_diag(&array![1.0, 5.0, 3.0, 2.0]);
        let f = pivoted_cholesky_of(a.view(), 4).unwrap();
        assert_eq!(f.pivots(), &[1, 2, 3, 0]);
    }

    #[test]
    fn full_rank_factor_reconstructs_base_kernel() {
        let n = 40;
        let x = random_inputs(n, 2, 1);
        let spec = short_scale_spec(2, 0.3);
        let f = pivoted_cholesky(&spec, x.view(), n).unwrap();
        let base = spec.with_noise_variance(0.0).unwrap();
        let k = dense_kernel_matrix(&base, x.view()).unwrap();
        let rec = f.l().dot(&f.l().t());
        let err = frobenius_norm((&rec - &k).view());
        assert!(err <= 1e-6 * frobenius_norm(k.view()), "relative error");
    }

    #[test]
    fn residual_diagonal_stays_nonnegative() {
        let n = 30;
        let x = random_inputs(n, 3, 2);
        let spec = short_scale_spec(3, 0.1);
        let base = spec.with_noise_variance(0.0).unwrap();
        let k = dense_kernel_matrix(&base, x.view()).unwrap();
        let f = pivoted_cholesky(&spec, x.view(), 10).unwrap();
        let rec = f.l().dot(&f.l().t());
        for i in 0..n {
            assert!(k[(i, i)] - rec[(i, i)] >= -1e-8);
        }
    }

    #[test]
    fn zero_outputscale_exhausts_immediately() {
        let n = 6;
        let x = random_inputs(n, 2, 3);
        let spec = KernelSpec::isotropic(KernelFamily::Matern52, 2, 1.0, 0.0, 0.5, 0.0).unwrap();
        let f = pivoted_cholesky(&spec, x.view(), 4).unwrap();
        assert_eq!(f.rank(), 0);
        let v = random_inputs(n, 2, 4);
        let out = precond_solve(&f, 0.5, v.view()).unwrap();
        let expect = &v / 0.5;
        assert_eq!(out, expect);
    }

    #[test]
    fn rank_zero_preconditioner_divides_by_noise() {
        let f = PivotedCholeskyFactor::<f64>::empty(5);
        let v = random_inputs(5, 3, 5);
        let out = precond_solve(&f, 2.0, v.view()).unwrap();
        assert_eq!(out, &v / 2.0);
        let z = Array2::<f64>::zeros((5, 2));
        assert!(precond_solve(&f, 2.0, z.view()).unwrap().iter().all(|&q| q == 0.0));
    }

    #[test]
    fn precond_solve_matches_dense_inverse() {
        use nalgebra::{Cholesky, DMatrix};
        let n = 50;
        let k = 10;
        let x = random_inputs(n, 2, 6);
        let spec = short_scale_spec(2, 0.2);
        let f = pivoted_cholesky(&spec, x.view(), k).unwrap();
        let sigma2 = 0.2;
        let v = random_inputs(n, 3, 7);
        let got = precond_solve(&f, sigma2, v.view()).unwrap();

        let lm = DMatrix::from_row_iterator(n, f.rank(), f.l().iter().copied());
        let p = &lm * lm.transpose() + DMatrix::identity(n, n) * sigma2;
        let vm = DMatrix::from_row_iterator(n, 3, v.iter().copied());
        let oracle = Cholesky::new(p).unwrap().solve(&vm);
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in 0..3 {
                err = err.max((got[(i, j)] - oracle[(i, j)]).abs());
            }
        }
        assert!(err < 1e-9, "max deviation {err}");
    }

    #[test]
    fn identity_system_converges_in_one_iteration() {
        let n = 15;
        let x = random_inputs(n, 2, 8);
        let spec = KernelSpec::isotropic(KernelFamily::Matern52, 2, 1.0, 0.0, 1.0, 0.0).unwrap();
        let b = random_inputs(n, 3, 9);
        let stop = StoppingCriteria::new(1e-10, 1, 100).unwrap();
        let out = cg_solve(&spec, x.view(), b.view(), &stop, None, 8).unwrap();
        assert!(out.converged);
        assert_eq!(out.trace.last().unwrap().epoch, 1);
        let err = frobenius_norm((&out.weights - &b).view());
        assert!(err <= 1e-10 * frobenius_norm(b.view()));
    }

    #[test]
    fn two_by_two_system_is_exact_within_two_iterations() {
        let x: Array2<f64> = array![[0.0], [0.0]];
        let spec = KernelSpec::isotropic(KernelFamily::Rbf, 1, 1.0, 1.0, 1.0, 0.0).unwrap();
        let b: Array2<f64> = array![[3.0], [3.0]];
        let stop = StoppingCriteria::new(1e-12, 1, 2).unwrap();
        let out = cg_solve(&spec, x.view(), b.view(), &stop, None, 2).unwrap();
        assert!((out.weights[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((out.weights[(1, 0)] - 1.0).abs() < 1e-12);
        assert!(out.trace.last().unwrap().epoch <= 2);
    }

    #[test]
    fn cg_matches_dense_oracle() {
        use nalgebra::{Cholesky, DMatrix};
        let n = 100;
        let x = random_inputs(n, 2, 10);
        let spec = short_scale_spec(2, 0.6);
        let b = random_inputs(n, 4, 11);
        let stop = StoppingCriteria::new(1e-10, 1, 500).unwrap();
        let out = cg_solve(&spec, x.view(), b.view(), &stop, None, 32).unwrap();
        assert!(out.converged);
        let dense = dense_kernel_matrix(&spec, x.view()).unwrap();
        let km = DMatrix::from_row_iterator(n, n, dense.iter().copied());
        let bm = DMatrix::from_row_iterator(n, 4, b.iter().copied());
        let oracle = Cholesky::new(km).unwrap().solve(&bm);
        let mut num = 0.0_f64;
        let mut den = 0.0_f64;
        for i in 0..n {
            for j in 0..4 {
                num += (out.weights[(i, j)] - oracle[(i, j)]).powi(2);
                den += oracle[(i, j)].powi(2);
            }
        }
        assert!(num.sqrt() <= 1e-7 * den.sqrt());
    }

    #[test]
    fn exact_arithmetic_limit_finishes_within_n_iterations() {
        let n = 60;
        let x = random_inputs(n, 2, 12);
        let spec = short_scale_spec(2, 1.0);
        let b = random_inputs(n, 2, 13);
        let stop = StoppingCriteria::new(1e-12, 1, n).unwrap();
        let out = cg_solve(&spec, x.view(), b.view(), &stop, None, 16).unwrap();
        assert!(out.converged, "CG did not reach machine precision in n iterations");
    }

    #[test]
    fn full_rank_preconditioner_converges_in_one_iteration() {
        let n = 40;
        let x = random_inputs(n, 2, 14);
        let spec = short_scale_spec(2, 0.05);
        let f = pivoted_cholesky(&spec, x.view(), n).unwrap();
        let b = random_inputs(n, 2, 15);
        let stop = StoppingCriteria::new(1e-8, 1, 50).unwrap();
        let out = cg_solve(&spec, x.view(), b.view(), &stop, Some(&f), 16).unwrap();
        assert!(out.converged);
        assert_eq!(out.trace.last().unwrap().epoch, 1);
    }

    #[test]
    fn zero_columns_are_left_untouched() {
        let n = 20;
        let x = random_inputs(n, 2, 16);
        let spec = short_scale_spec(2, 0.4);
        let mut b = random_inputs(n, 2, 17);
        b.column_mut(1).fill(0.0);
        let stop = StoppingCriteria::new(1e-8, 1, 100).unwrap();
        let out = cg_solve(&spec, x.view(), b.view(), &stop, None, 8).unwrap();
        assert!(out.converged);
        assert!(out.weights.column(1).iter().all(|&v| v == 0.0));
    }
}
