//! Small dense routines: Cholesky factorization, triangular solves, and a
//! Jacobi eigenvalue sweep. These back the block cache and the exact
//! (desk-scale) evaluation paths; nothing here is matrix-free.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// In-place lower Cholesky factorization `A = L L^T`. The strict upper
/// triangle is zeroed. Fails on a non-positive pivot.
pub fn cholesky_in_place<F: Scalar>(a: &mut Array2<F>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let s = a
        .as_slice_mut()
        .expect("owned Array2 is standard layout");
    for j in 0..n {
        let (head, tail) = s.split_at_mut(j * n + j);
        let row_j = &head[j * n..j * n + j];
        let djj = tail[0] - dot(row_j, row_j);
        if !(djj > F::zero()) || !djj.is_finite() {
            return Err(Error::NotPositiveDefinite {
                context: format!("pivot {j} is {djj}"),
            });
        }
        let ljj = djj.sqrt();
        tail[0] = ljj;
        for i in j + 1..n {
            let (upper, lower) = s.split_at_mut(i * n);
            let row_j = &upper[j * n..j * n + j];
            let acc = dot(&lower[..j], row_j);
            lower[j] = (lower[j] - acc) / ljj;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            s[i * n + j] = F::zero();
        }
    }
    Ok(())
}

/// Forward substitution: `B <- L^{-1} B` for lower-triangular `L`.
pub fn solve_lower_in_place<F: Scalar>(l: &Array2<F>, b: &mut Array2<F>) {
    let n = l.nrows();
    debug_assert_eq!(b.nrows(), n);
    let c = b.ncols();
    let ls = l.as_slice().expect("factor is standard layout");
    let bs = b.as_slice_mut().expect("rhs is standard layout");
    for i in 0..n {
        let (done, rest) = bs.split_at_mut(i * c);
        let row_i = &mut rest[..c];
        for k in 0..i {
            let lik = ls[i * n + k];
            if lik != F::zero() {
                let row_k = &done[k * c..(k + 1) * c];
                for (bi, &bk) in row_i.iter_mut().zip(row_k) {
                    *bi = *bi - lik * bk;
                }
            }
        }
        let inv = F::one() / ls[i * n + i];
        for bi in row_i.iter_mut() {
            *bi = *bi * inv;
        }
    }
}

/// Back substitution: `B <- L^{-T} B` for lower-triangular `L`.
pub fn solve_lower_transpose_in_place<F: Scalar>(l: &Array2<F>, b: &mut Array2<F>) {
    let n = l.nrows();
    debug_assert_eq!(b.nrows(), n);
    let c = b.ncols();
    let ls = l.as_slice().expect("factor is standard layout");
    let bs = b.as_slice_mut().expect("rhs is standard layout");
    for i in (0..n).rev() {
        let (head, rest) = bs.split_at_mut(i * c);
        let _ = head;
        let (row_i, below) = rest.split_at_mut(c);
        for k in i + 1..n {
            let lki = ls[k * n + i];
            if lki != F::zero() {
                let row_k = &below[(k - i - 1) * c..(k - i) * c];
                for (bi, &bk) in row_i.iter_mut().zip(row_k) {
                    *bi = *bi - lki * bk;
                }
            }
        }
        let inv = F::one() / ls[i * n + i];
        for bi in row_i.iter_mut() {
            *bi = *bi * inv;
        }
    }
}

/// Solve `A X = B` for SPD `A` via a fresh Cholesky factorization.
pub fn solve_spd<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Result<Array2<F>> {
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "solve_spd: matrix is {}x{} but rhs has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let mut l = a.to_owned();
    cholesky_in_place(&mut l)?;
    let mut x = b.to_owned();
    solve_lower_in_place(&l, &mut x);
    solve_lower_transpose_in_place(&l, &mut x);
    Ok(x)
}

/// `log det A = 2 sum log L_ii` from a Cholesky factor.
pub fn logdet_from_factor<F: Scalar>(l: &Array2<F>) -> F {
    let two = F::cast(2.0);
    l.diag().iter().map(|&d| d.ln()).sum::<F>() * two
}

pub fn frobenius_norm<F: Scalar>(a: ArrayView2<F>) -> f64 {
    a.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
/// Intended for desk-scale checks (n up to a few hundred).
pub fn sym_eigenvalues<F: Scalar>(a: ArrayView2<F>) -> Result<Array1<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch("eigenvalues need a square matrix".into()));
    }
    let mut m = a.to_owned();
    let frob = F::cast(frobenius_norm(a));
    let tol = F::cast(1e-14) * frob.max(F::one());
    for _sweep in 0..60 {
        let mut off = F::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + m[(p, q)] * m[(p, q)];
            }
        }
        if (off + off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * F::cast(1e-3) {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (F::cast(2.0) * apq);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<F> = m.diag().iter().copied().collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalues are finite"));
    Ok(Array1::from_vec(eig))
}
