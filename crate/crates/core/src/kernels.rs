//! Kernel functions, hyperparameter containers, and blocked (lazy)
//! evaluation of kernel-matrix pieces without materializing the full
//! n-by-n matrix.
//!
//! The observational noise sigma^2 is folded into the kernel diagonal, so
//! every solver sees a single SPD matrix `K = K_base + sigma^2 I`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, CowArray, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default lower bound on the observational noise used during training.
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-4;

/// Fixed row-panel height for internally parallel evaluation. Results are
/// independent of thread count because each output row is written by
/// exactly one panel.
const EVAL_PANEL_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern52,
    Matern32,
    Rbf,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Rbf => "rbf",
        }
    }
}

/// Kernel family plus hyperparameters (ARD lengthscales, outputscale,
/// observational noise, constant prior mean).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<F: Scalar> {
    family: KernelFamily,
    lengthscales: Array1<F>,
    outputscale: F,
    noise_variance: F,
    mean_constant: F,
}

impl<F: Scalar> KernelSpec<F> {
    pub fn new(
        family: KernelFamily,
        lengthscales: Array1<F>,
        outputscale: F,
        noise_variance: F,
        mean_constant: F,
    ) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidInput(
                "lengthscales must have at least one dimension".into(),
            ));
        }
        for (j, l) in lengthscales.iter().enumerate() {
            if !l.is_finite() || *l <= F::zero() {
                return Err(Error::InvalidInput(format!(
                    "lengthscale[{j}] must be positive and finite, got {l}"
                )));
            }
        }
        if !outputscale.is_finite() || outputscale < F::zero() {
            return Err(Error::InvalidInput(format!(
                "outputscale must be non-negative and finite, got {outputscale}"
            )));
        }
        if !noise_variance.is_finite() || noise_variance < F::zero() {
            return Err(Error::InvalidInput(format!(
                "noise_variance must be non-negative and finite, got {noise_variance}"
            )));
        }
        if !mean_constant.is_finite() {
            return Err(Error::InvalidInput("mean_constant must be finite".into()));
        }
        Ok(Self {
            family,
            lengthscales,
            outputscale,
            noise_variance,
            mean_constant,
        })
    }

    /// Isotropic convenience constructor: one lengthscale repeated over `dims`.
    pub fn isotropic(
        family: KernelFamily,
        dims: usize,
        lengthscale: F,
        outputscale: F,
        noise_variance: F,
        mean_constant: F,
    ) -> Result<Self> {
        Self::new(
            family,
            Array1::from_elem(dims, lengthscale),
            outputscale,
            noise_variance,
            mean_constant,
        )
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dims(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> ArrayView1<'_, F> {
        self.lengthscales.view()
    }

    pub fn outputscale(&self) -> F {
        self.outputscale
    }

    pub fn noise_variance(&self) -> F {
        self.noise_variance
    }

    pub fn mean_constant(&self) -> F {
        self.mean_constant
    }

    pub fn with_lengthscales(&self, lengthscales: Array1<F>) -> Result<Self> {
        Self::new(
            self.family,
            lengthscales,
            self.outputscale,
            self.noise_variance,
            self.mean_constant,
        )
    }

    pub fn with_outputscale(&self, outputscale: F) -> Result<Self> {
        Self::new(
            self.family,
            self.lengthscales.clone(),
            outputscale,
            self.noise_variance,
            self.mean_constant,
        )
    }

    pub fn with_noise_variance(&self, noise_variance: F) -> Result<Self> {
        Self::new(
            self.family,
            self.lengthscales.clone(),
            self.outputscale,
            noise_variance,
            self.mean_constant,
        )
    }

    pub fn with_mean_constant(&self, mean_constant: F) -> Result<Self> {
        Self::new(
            self.family,
            self.lengthscales.clone(),
            self.outputscale,
            self.noise_variance,
            mean_constant,
        )
    }

    /// Hash of the hyperparameters; used to invalidate Cholesky caches when
    /// the spec changes. Stable within and across processes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.family.hash(&mut h);
        self.lengthscales.len().hash(&mut h);
        for l in &self.lengthscales {
            l.as_f64().to_bits().hash(&mut h);
        }
        self.outputscale.as_f64().to_bits().hash(&mut h);
        self.noise_variance.as_f64().to_bits().hash(&mut h);
        self.mean_constant.as_f64().to_bits().hash(&mut h);
        h.finish()
    }
}

/// Plain-f64 view of a [`KernelSpec`]; the serialized form used in config,
/// model files, and logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpecValues {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
    pub noise_variance: f64,
    pub mean_constant: f64,
}

impl KernelSpecValues {
    pub fn to_spec<F: Scalar>(&self) -> Result<KernelSpec<F>> {
        KernelSpec::new(
            self.family,
            self.lengthscales.iter().map(|&l| F::cast(l)).collect(),
            F::cast(self.outputscale),
            F::cast(self.noise_variance),
            F::cast(self.mean_constant),
        )
    }
}

impl<F: Scalar> From<&KernelSpec<F>> for KernelSpecValues {
    fn from(spec: &KernelSpec<F>) -> Self {
        Self {
            family: spec.family,
            lengthscales: spec.lengthscales.iter().map(|l| l.as_f64()).collect(),
            outputscale: spec.outputscale.as_f64(),
            noise_variance: spec.noise_variance.as_f64(),
            mean_constant: spec.mean_constant.as_f64(),
        }
    }
}

/// Precomputed evaluation context: inverse lengthscales and family
/// constants hoisted out of the inner loops.
pub(crate) struct KernelEval<F: Scalar> {
    family: KernelFamily,
    inv_lengthscales: Vec<F>,
    outputscale: F,
    noise: F,
    sqrt3: F,
    sqrt5: F,
}

impl<F: Scalar> KernelEval<F> {
    pub fn new(spec: &KernelSpec<F>) -> Self {
        Self {
            family: spec.family,
            inv_lengthscales: spec.lengthscales.iter().map(|&l| F::one() / l).collect(),
            outputscale: spec.outputscale,
            noise: spec.noise_variance,
            sqrt3: F::cast(3.0).sqrt(),
            sqrt5: F::cast(5.0).sqrt(),
        }
    }

    /// ARD-scaled Euclidean distance, clamped at zero before the sqrt.
    #[inline]
    fn scaled_distance(&self, a: &[F], b: &[F]) -> F {
        let mut acc = F::zero();
        for ((&ai, &bi), &il) in a.iter().zip(b).zip(&self.inv_lengthscales) {
            let d = (ai - bi) * il;
            acc = acc + d * d;
        }
        acc.max(F::zero()).sqrt()
    }

    #[inline]
    fn base(&self, r: F) -> F {
        match self.family {
            KernelFamily::Matern52 => {
                let t = self.sqrt5 * r;
                (F::one() + t + t * t / F::cast(3.0)) * (-t).exp()
            }
            KernelFamily::Matern32 => {
                let t = self.sqrt3 * r;
                (F::one() + t) * (-t).exp()
            }
            KernelFamily::Rbf => (-(r * r) / F::cast(2.0)).exp(),
        }
    }

    #[inline]
    pub fn value(&self, a: &[F], b: &[F], same_point: bool) -> F {
        let v = self.outputscale * self.base(self.scaled_distance(a, b));
        if same_point {
            v + self.noise
        } else {
            v
        }
    }
}

fn check_dims<F: Scalar>(spec: &KernelSpec<F>, x: &ArrayView2<F>) -> Result<()> {
    if x.ncols() != spec.dims() {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {} columns but the kernel has {} lengthscales",
            x.ncols(),
            spec.dims()
        )));
    }
    Ok(())
}

fn check_indices(name: &str, idx: &[usize], n: usize) -> Result<()> {
    for &i in idx {
        if i >= n {
            return Err(Error::IndexOutOfRange(format!(
                "{name} index {i} out of range for {n} inputs"
            )));
        }
    }
    Ok(())
}

/// Owns a contiguous copy only when the view is not already standard layout.
fn contiguous<'a, F: Scalar>(x: ArrayView2<'a, F>) -> CowArray<'a, F, Ix2> {
    if x.is_standard_layout() {
        CowArray::from(x)
    } else {
        CowArray::from(x.to_owned())
    }
}

/// Single kernel entry `outputscale * k_base(r) (+ sigma^2 iff same_point)`
/// with `r` the ARD-scaled distance between `x` and `x_other`.
pub fn kernel_value<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView1<F>,
    x_other: ArrayView1<F>,
    same_point: bool,
) -> Result<F> {
    if x.len() != spec.dims() || x_other.len() != spec.dims() {
        return Err(Error::ShapeMismatch(format!(
            "points of dimension {} and {} vs kernel dimension {}",
            x.len(),
            x_other.len(),
            spec.dims()
        )));
    }
    if x.iter().chain(x_other.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "kernel inputs contain non-finite coordinates".into(),
        ));
    }
    let a: Vec<F> = x.iter().copied().collect();
    let b: Vec<F> = x_other.iter().copied().collect();
    Ok(KernelEval::new(spec).value(&a, &b, same_point))
}

/// The `|rows| x |cols|` kernel block `K[rows, cols]`. Entry `(a, b)` gets
/// the noise term iff `rows[a] == cols[b]`. When `rows == cols` the upper
/// triangle is evaluated and mirrored, so the block is exactly symmetric.
pub fn kernel_block<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    rows: &[usize],
    cols: &[usize],
) -> Result<Array2<F>> {
    check_dims(spec, &x)?;
    let n = x.nrows();
    check_indices("row", rows, n)?;
    check_indices("col", cols, n)?;
    let xc = contiguous(x);
    let xs = xc.as_slice().expect("contiguous copy is standard layout");
    let d = spec.dims();
    let ev = KernelEval::new(spec);

    let mut out = Array2::<F>::zeros((rows.len(), cols.len()));
    if rows == cols {
        out.axis_chunks_iter_mut(Axis(0), EVAL_PANEL_ROWS)
            .into_par_iter()
            .enumerate()
            .for_each(|(chunk, mut panel)| {
                let row0 = chunk * EVAL_PANEL_ROWS;
                for (pa, mut out_row) in panel.rows_mut().into_iter().enumerate() {
                    let a = row0 + pa;
                    let xa = &xs[rows[a] * d..(rows[a] + 1) * d];
                    for b in a..cols.len() {
                        let xb = &xs[cols[b] * d..(cols[b] + 1) * d];
                        out_row[b] = ev.value(xa, xb, rows[a] == cols[b]);
                    }
                }
            });
        // Mirror the strict upper triangle; bitwise-equal transpose.
        for a in 1..rows.len() {
            for b in 0..a {
                out[(a, b)] = out[(b, a)];
            }
        }
    } else {
        out.axis_chunks_iter_mut(Axis(0), EVAL_PANEL_ROWS)
            .into_par_iter()
            .enumerate()
            .for_each(|(chunk, mut panel)| {
                let row0 = chunk * EVAL_PANEL_ROWS;
                for (pa, mut out_row) in panel.rows_mut().into_iter().enumerate() {
                    let a = row0 + pa;
                    let xa = &xs[rows[a] * d..(rows[a] + 1) * d];
                    for (b, ob) in out_row.iter_mut().enumerate() {
                        let xb = &xs[cols[b] * d..(cols[b] + 1) * d];
                        *ob = ev.value(xa, xb, rows[a] == cols[b]);
                    }
                }
            });
    }
    Ok(out)
}

/// The `n x |cols|` panel `K[:, cols]`; row index runs over all inputs.
/// Same evaluation path as [`kernel_block`], so entries tile bitwise.
pub fn kernel_columns<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    cols: &[usize],
) -> Result<Array2<F>> {
    check_dims(spec, &x)?;
    let n = x.nrows();
    check_indices("col", cols, n)?;
    let xc = contiguous(x);
    let xs = xc.as_slice().expect("contiguous copy is standard layout");
    let d = spec.dims();
    let ev = KernelEval::new(spec);

    let mut out = Array2::<F>::zeros((n, cols.len()));
    out.axis_chunks_iter_mut(Axis(0), EVAL_PANEL_ROWS)
        .into_par_iter()
        .enumerate()
        .for_each(|(chunk, mut panel)| {
            let row0 = chunk * EVAL_PANEL_ROWS;
            for (pa, mut out_row) in panel.rows_mut().into_iter().enumerate() {
                let i = row0 + pa;
                let xi = &xs[i * d..(i + 1) * d];
                for (b, ob) in out_row.iter_mut().enumerate() {
                    let xb = &xs[cols[b] * d..(cols[b] + 1) * d];
                    *ob = ev.value(xi, xb, i == cols[b]);
                }
            }
        });
    Ok(out)
}

/// `K @ V` computed in row panels of height `block_rows`; peak extra
/// memory is `O(block_rows * n)` per worker.
pub fn kernel_matvec<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    v: ArrayView2<F>,
    block_rows: usize,
) -> Result<Array2<F>> {
    check_dims(spec, &x)?;
    let n = x.nrows();
    if v.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "matvec operand has {} rows, expected {}",
            v.nrows(),
            n
        )));
    }
    if block_rows == 0 {
        return Err(Error::InvalidInput("block_rows must be positive".into()));
    }
    let xc = contiguous(x);
    let xs = xc.as_slice().expect("contiguous copy is standard layout");
    let d = spec.dims();
    let ev = KernelEval::new(spec);

    let mut out = Array2::<F>::zeros((n, v.ncols()));
    out.axis_chunks_iter_mut(Axis(0), block_rows)
        .into_par_iter()
        .enumerate()
        .for_each(|(chunk, mut out_panel)| {
            let row0 = chunk * block_rows;
            let rows = out_panel.nrows();
            let mut panel = Array2::<F>::zeros((rows, n));
            for (pa, mut panel_row) in panel.rows_mut().into_iter().enumerate() {
                let i = row0 + pa;
                let xi = &xs[i * d..(i + 1) * d];
                for (j, pj) in panel_row.iter_mut().enumerate() {
                    let xj = &xs[j * d..(j + 1) * d];
                    *pj = ev.value(xi, xj, i == j);
                }
            }
            out_panel.assign(&panel.dot(&v));
        });
    Ok(out)
}

/// Cross-kernel `k(x_left_i, x_right_j)` between two input sets; no noise
/// term anywhere (the sets are treated as distinct points).
pub fn kernel_cross<F: Scalar>(
    spec: &KernelSpec<F>,
    x_left: ArrayView2<F>,
    x_right: ArrayView2<F>,
) -> Result<Array2<F>> {
    check_dims(spec, &x_left)?;
    check_dims(spec, &x_right)?;
    let lc = contiguous(x_left);
    let rc = contiguous(x_right);
    let ls = lc.as_slice().expect("contiguous copy is standard layout");
    let rs = rc.as_slice().expect("contiguous copy is standard layout");
    let d = spec.dims();
    let ev = KernelEval::new(spec);

    let mut out = Array2::<F>::zeros((x_left.nrows(), x_right.nrows()));
    out.axis_chunks_iter_mut(Axis(0), EVAL_PANEL_ROWS)
        .into_par_iter()
        .enumerate()
        .for_each(|(chunk, mut panel)| {
            let row0 = chunk * EVAL_PANEL_ROWS;
            for (pa, mut out_row) in panel.rows_mut().into_iter().enumerate() {
                let xi = &ls[(row0 + pa) * d..(row0 + pa + 1) * d];
                for (j, oj) in out_row.iter_mut().enumerate() {
                    let xj = &rs[j * d..(j + 1) * d];
                    *oj = ev.value(xi, xj, false);
                }
            }
        });
    Ok(out)
}

/// Fully materialized `n x n` kernel matrix. Desk-scale only; the solvers
/// never call this, it backs the exact/oracle operations.
pub fn dense_kernel_matrix<F: Scalar>(spec: &KernelSpec<F>, x: ArrayView2<F>) -> Result<Array2<F>> {
    let all: Vec<usize> = (0..x.nrows()).collect();
    kernel_block(spec, x, &all, &all)
}
