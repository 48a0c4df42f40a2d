//! Kernel derivatives and the stochastic MLL gradient
//! `-1/2 b0^T K^{-1} Kdot K^{-1} b0 + 1/(2l) sum_i (z_i^T K^{-1}) Kdot z_i`,
//! assembled from one batched solve plus blocked `Kdot` panel products.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::altproj::StoppingCriteria;
use crate::error::{Error, Result};
use crate::kernels::{dense_kernel_matrix, KernelFamily, KernelSpec};
use crate::linalg::solve_spd;
use crate::scalar::Scalar;

use super::{solve_system, SolverChoice, TraceProbeSet};

/// Identifies one differentiable hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperParam {
    MeanConstant,
    Lengthscale(usize),
    Outputscale,
    NoiseVariance,
}

/// Gradient of the negative MLL with respect to the constrained
/// hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MllGradient<F: Scalar> {
    pub mean_constant: F,
    pub lengthscales: Array1<F>,
    pub outputscale: F,
    pub noise_variance: F,
}

impl<F: Scalar> MllGradient<F> {
    /// Flat layout `[mean, lengthscales.., outputscale, noise]`.
    pub fn to_vec(&self) -> Vec<F> {
        let mut v = Vec::with_capacity(self.lengthscales.len() + 3);
        v.push(self.mean_constant);
        v.extend(self.lengthscales.iter().copied());
        v.push(self.outputscale);
        v.push(self.noise_variance);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|g| g.is_finite())
    }
}

/// Solver statistics carried alongside a gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveSummary {
    pub epochs_or_iters: usize,
    pub avg_rel_residual_at_stop: f64,
    pub flops: u64,
    pub converged: bool,
}

struct GradEval<F: Scalar> {
    family: KernelFamily,
    inv_lengthscales: Vec<F>,
    outputscale: F,
    sqrt3: F,
    sqrt5: F,
}

impl<F: Scalar> GradEval<F> {
    fn new(spec: &KernelSpec<F>) -> Self {
        Self {
            family: spec.family(),
            inv_lengthscales: spec.lengthscales().iter().map(|&l| F::one() / l).collect(),
            outputscale: spec.outputscale(),
            sqrt3: F::cast(3.0).sqrt(),
            sqrt5: F::cast(5.0).sqrt(),
        }
    }

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

    /// `phi(r) = -g'(r)/r`, smooth through `r = 0`, so that
    /// `d k / d l_j = s * phi(r) * diff_j^2 / l_j^3`.
    #[inline]
    fn phi(&self, r: F) -> F {
        match self.family {
            KernelFamily::Matern52 => {
                let t = self.sqrt5 * r;
                F::cast(5.0 / 3.0) * (F::one() + t) * (-t).exp()
            }
            KernelFamily::Matern32 => F::cast(3.0) * (-(self.sqrt3 * r)).exp(),
            KernelFamily::Rbf => (-(r * r) / F::cast(2.0)).exp(),
        }
    }

    #[inline]
    fn entry(&self, a: &[F], b: &[F], same_point: bool, param: HyperParam) -> F {
        match param {
            HyperParam::MeanConstant => F::zero(),
            HyperParam::NoiseVariance => {
                if same_point {
                    F::one()
                } else {
                    F::zero()
                }
            }
            HyperParam::Outputscale => self.base(self.scaled_distance(a, b)),
            HyperParam::Lengthscale(j) => {
                let il = self.inv_lengthscales[j];
                let dj = (a[j] - b[j]) * il;
                let r = self.scaled_distance(a, b);
                self.outputscale * self.phi(r) * dj * dj * il
            }
        }
    }
}

fn check_param<F: Scalar>(spec: &KernelSpec<F>, param: HyperParam) -> Result<()> {
    if let HyperParam::Lengthscale(j) = param {
        if j >= spec.dims() {
            return Err(Error::InvalidInput(format!(
                "lengthscale index {j} out of range for {} dimensions",
                spec.dims()
            )));
        }
    }
    Ok(())
}

/// Entrywise `dK/dtheta` block in the constrained parameterization;
/// the noise derivative is the identity on same-index pairs and the mean
/// derivative is zero (the mean enters through the right-hand side).
pub fn kernel_gradient_block<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    rows: &[usize],
    cols: &[usize],
    param: HyperParam,
) -> Result<Array2<F>> {
    check_param(spec, param)?;
    let n = x.nrows();
    for &i in rows.iter().chain(cols) {
        if i >= n {
            return Err(Error::IndexOutOfRange(format!(
                "index {i} out of range for {n} inputs"
            )));
        }
    }
    let xo;
    let xs = match x.as_slice() {
        Some(s) => s,
        None => {
            xo = x.to_owned();
            xo.as_slice().expect("owned array is standard layout")
        }
    };
    let d = spec.dims();
    let ev = GradEval::new(spec);
    let mut out = Array2::zeros((rows.len(), cols.len()));
    for (a, oa) in out.rows_mut().into_iter().enumerate() {
        let xa = &xs[rows[a] * d..(rows[a] + 1) * d];
        for (b, ob) in oa.into_iter().enumerate() {
            let xb = &xs[cols[b] * d..(cols[b] + 1) * d];
            *ob = ev.entry(xa, xb, rows[a] == cols[b], param);
        }
    }
    Ok(out)
}

/// `dK/dtheta @ V` in row panels; never materializes more than one
/// `block_rows x n` panel per worker.
pub fn kernel_gradient_matvec<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    v: ArrayView2<F>,
    param: HyperParam,
    block_rows: usize,
) -> Result<Array2<F>> {
    check_param(spec, param)?;
    let n = x.nrows();
    if v.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "operand has {} rows, expected {}",
            v.nrows(),
            n
        )));
    }
    if block_rows == 0 {
        return Err(Error::InvalidInput("block_rows must be positive".into()));
    }
    if param == HyperParam::NoiseVariance {
        return Ok(v.to_owned());
    }
    if param == HyperParam::MeanConstant {
        return Ok(Array2::zeros(v.dim()));
    }
    let xo;
    let xs = match x.as_slice() {
        Some(s) => s,
        None => {
            xo = x.to_owned();
            xo.as_slice().expect("owned array is standard layout")
        }
    };
    let d = spec.dims();
    let ev = GradEval::new(spec);
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
                    *pj = ev.entry(xi, xj, i == j, param);
                }
            }
            out_panel.assign(&panel.dot(&v));
        });
    Ok(out)
}

/// Unbiased stochastic estimate of the negative-MLL gradient from one
/// batched solve `K W = [y - mu, z_1, ..., z_l]`, plus the exact
/// mean-constant gradient `-1^T K^{-1} (y - mu)` read off column 0.
pub fn mll_gradient_estimate<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    probes: &TraceProbeSet<F>,
    solver: &SolverChoice,
    stop: &StoppingCriteria,
    panel_rows: usize,
) -> Result<(MllGradient<F>, SolveSummary)> {
    if probes.mean_constant() != spec.mean_constant() {
        return Err(Error::InvalidInput(
            "probe set was built for a different prior mean".into(),
        ));
    }
    let l = probes.num_probes();
    if l == 0 {
        return Err(Error::InvalidInput(
            "at least one trace probe is required".into(),
        ));
    }
    let b = probes.matrix();
    let outcome = solve_system(spec, x, b.view(), solver, stop, panel_rows)?;
    let w = &outcome.weights;
    let w0 = w.column(0).to_owned();

    // Targets for the Kdot panel products: [K^{-1} b0 | z_1 .. z_l].
    let mut targets = b.clone();
    targets.column_mut(0).assign(&w0);

    let half = F::cast(0.5);
    let trace_scale = F::cast(1.0 / (2.0 * l as f64));

    let assemble = |kdot_t: &Array2<F>| -> F {
        let quad: F = w0
            .iter()
            .zip(kdot_t.column(0).iter())
            .map(|(&a, &b)| a * b)
            .sum();
        let mut trace_term = F::zero();
        for i in 1..=l {
            let dot: F = w
                .column(i)
                .iter()
                .zip(kdot_t.column(i).iter())
                .map(|(&a, &b)| a * b)
                .sum();
            trace_term = trace_term + dot;
        }
        -half * quad + trace_scale * trace_term
    };

    let mut lengthscales = Array1::zeros(spec.dims());
    for j in 0..spec.dims() {
        let kdot_t =
            kernel_gradient_matvec(spec, x, targets.view(), HyperParam::Lengthscale(j), panel_rows)?;
        lengthscales[j] = assemble(&kdot_t);
    }
    let outputscale = {
        let kdot_t =
            kernel_gradient_matvec(spec, x, targets.view(), HyperParam::Outputscale, panel_rows)?;
        assemble(&kdot_t)
    };
    // Noise derivative is the identity: no panels needed.
    let noise_variance = assemble(&targets);
    let mean_constant = -w0.iter().copied().sum::<F>();

    let last = outcome.trace.last();
    let summary = SolveSummary {
        epochs_or_iters: last.map_or(0, |r| r.epoch),
        avg_rel_residual_at_stop: last.map_or(0.0, |r| r.avg_rel_residual),
        flops: last.map_or(0, |r| r.cumulative_flops),
        converged: outcome.converged,
    };
    Ok((
        MllGradient {
            mean_constant,
            lengthscales,
            outputscale,
            noise_variance,
        },
        summary,
    ))
}

/// Closed-form gradient of the exact negative MLL,
/// `-1/2 a^T Kdot a + 1/2 tr(K^{-1} Kdot)` with `a = K^{-1}(y - mu)`.
/// Dense oracle path, cubic in `n`.
pub fn exact_mll_gradient<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    y: ArrayView1<F>,
) -> Result<MllGradient<F>> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} inputs",
            y.len(),
            n
        )));
    }
    let k = dense_kernel_matrix(spec, x)?;
    let mu = spec.mean_constant();
    let mut centered = Array2::zeros((n, 1));
    for (i, &yi) in y.iter().enumerate() {
        centered[(i, 0)] = yi - mu;
    }
    let a = solve_spd(k.view(), centered.view())?;
    let k_inv = solve_spd(k.view(), Array2::eye(n).view())?;
    let all: Vec<usize> = (0..n).collect();
    let half = F::cast(0.5);

    let grad_for = |param: HyperParam| -> Result<F> {
        let kdot = kernel_gradient_block(spec, x, &all, &all, param)?;
        let kdot_a = kdot.dot(&a);
        let quad: F = a
            .column(0)
            .iter()
            .zip(kdot_a.column(0).iter())
            .map(|(&u, &v)| u * v)
            .sum();
        let trace: F = k_inv
            .iter()
            .zip(kdot.iter())
            .map(|(&u, &v)| u * v)
            .sum();
        Ok(-half * quad + half * trace)
    };

    let mut lengthscales = Array1::zeros(spec.dims());
    for j in 0..spec.dims() {
        lengthscales[j] = grad_for(HyperParam::Lengthscale(j))?;
    }
    let outputscale = grad_for(HyperParam::Outputscale)?;
    let noise_variance = {
        let quad: F = a.column(0).iter().map(|&u| u * u).sum();
        let trace: F = k_inv.diag().iter().copied().sum();
        -half * quad + half * trace
    };
    let mean_constant = -a.column(0).iter().copied().sum::<F>();
    Ok(MllGradient {
        mean_constant,
        lengthscales,
        outputscale,
        noise_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altproj::SelectionRule;
    use crate::gp::exact_mll;
    use crate::kernels::KernelSpecValues;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen::<f64>())
    }

    fn test_spec(family: KernelFamily) -> KernelSpec<f64> {
        KernelSpec::new(family, array![0.6, 0.9], 1.4, 0.35, 0.2).unwrap()
    }

    #[test]
    fn noise_gradient_block_is_identity_on_diagonal_pairs() {
        let x = random_inputs(6, 2, 1);
        let spec = test_spec(KernelFamily::Matern52);
        let idx: Vec<usize> = (0..6).collect();
        let g = kernel_gradient_block(&spec, x.view(), &idx, &idx, HyperParam::NoiseVariance)
            .unwrap();
        assert_eq!(g, Array2::<f64>::eye(6));
    }

    #[test]
    fn mean_gradient_block_is_zero() {
        let x = random_inputs(5, 2, 2);
        let spec = test_spec(KernelFamily::Rbf);
        let idx: Vec<usize> = (0..5).collect();
        let g = kernel_gradient_block(&spec, x.view(), &idx, &idx, HyperParam::MeanConstant)
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_lengthscale_index_errors() {
        let x = random_inputs(4, 2, 3);
        let spec = test_spec(KernelFamily::Matern52);
        assert!(kernel_gradient_block(
            &spec,
            x.view(),
            &[0],
            &[1],
            HyperParam::Lengthscale(2)
        )
        .is_err());
    }

    fn perturbed(spec: &KernelSpec<f64>, param: HyperParam, h: f64) -> KernelSpec<f64> {
        match param {
            HyperParam::Lengthscale(j) => {
                let mut ls = spec.lengthscales().to_owned();
                ls[j] += h;
                spec.with_lengthscales(ls).unwrap()
            }
            HyperParam::Outputscale => spec.with_outputscale(spec.outputscale() + h).unwrap(),
            HyperParam::NoiseVariance => {
                spec.with_noise_variance(spec.noise_variance() + h).unwrap()
            }
            HyperParam::MeanConstant => spec.with_mean_constant(spec.mean_constant() + h).unwrap(),
        }
    }

    fn param_value(spec: &KernelSpec<f64>, param: HyperParam) -> f64 {
        match param {
            HyperParam::Lengthscale(j) => spec.lengthscales()[j],
            HyperParam::Outputscale => spec.outputscale(),
            HyperParam::NoiseVariance => spec.noise_variance(),
            HyperParam::MeanConstant => spec.mean_constant(),
        }
    }

    #[test]
    fn gradient_blocks_match_central_differences() {
        let n = 14;
        let x = random_inputs(n, 2, 4);
        let idx: Vec<usize> = (0..n).collect();
        for family in [KernelFamily::Matern52, KernelFamily::Matern32, KernelFamily::Rbf] {
            let spec = test_spec(family);
            for param in [
                HyperParam::Lengthscale(0),
                HyperParam::Lengthscale(1),
                HyperParam::Outputscale,
                HyperParam::NoiseVariance,
            ] {
                let h = 1e-5 * param_value(&spec, param).abs();
                let kp = dense_kernel_matrix(&perturbed(&spec, param, h), x.view()).unwrap();
                let km = dense_kernel_matrix(&perturbed(&spec, param, -h), x.view()).unwrap();
                let fd = (&kp - &km) / (2.0 * h);
                let an =
                    kernel_gradient_block(&spec, x.view(), &idx, &idx, param).unwrap();
                let num = crate::linalg::frobenius_norm((&an - &fd).view());
                let den = crate::linalg::frobenius_norm(fd.view()).max(1e-12);
                assert!(
                    num <= 1e-6 * den,
                    "{family:?} {param:?}: relative error {}",
                    num / den
                );
            }
        }
    }

    #[test]
    fn log_outputscale_gradient_identity() {
        // s * dK/ds = K - sigma^2 I, i.e. the gradient under a log
        // parameterization of the outputscale.
        let n = 10;
        let x = random_inputs(n, 2, 5);
        let spec = test_spec(KernelFamily::Matern52);
        let idx: Vec<usize> = (0..n).collect();
        let dk =
            kernel_gradient_block(&spec, x.view(), &idx, &idx, HyperParam::Outputscale).unwrap();
        let scaled = dk * spec.outputscale();
        let mut expect = dense_kernel_matrix(&spec, x.view()).unwrap();
        for i in 0..n {
            expect[(i, i)] -= spec.noise_variance();
        }
        let err = crate::linalg::frobenius_norm((&scaled - &expect).view());
        assert!(err <= 1e-12 * crate::linalg::frobenius_norm(expect.view()));
    }

    #[test]
    fn gradient_matvec_matches_dense_block_product() {
        let n = 40;
        let x = random_inputs(n, 2, 6);
        let spec = test_spec(KernelFamily::Matern52);
        let v = random_inputs(n, 3, 7);
        let idx: Vec<usize> = (0..n).collect();
        for param in [
            HyperParam::Lengthscale(1),
            HyperParam::Outputscale,
            HyperParam::NoiseVariance,
        ] {
            let dense = kernel_gradient_block(&spec, x.view(), &idx, &idx, param).unwrap();
            let expect = dense.dot(&v);
            let got = kernel_gradient_matvec(&spec, x.view(), v.view(), param, 11).unwrap();
            let err = crate::linalg::frobenius_norm((&got - &expect).view());
            assert!(err <= 1e-11 * crate::linalg::frobenius_norm(expect.view()).max(1.0));
        }
    }

    #[test]
    fn hand_computed_gradient_for_scaled_identity() {
        // K = 2I (outputscale 0, noise 2), y = [1, 1]: the noise-variance
        // gradient is -1/2 * |K^{-1}y|^2 + 1/2 tr(K^{-1}) = 0.25.
        let x: Array2<f64> = array![[0.0], [1.0]];
        let spec = KernelSpec::isotropic(KernelFamily::Rbf, 1, 1.0, 0.0, 2.0, 0.0).unwrap();
        let y: Array1<f64> = array![1.0, 1.0];
        let g = exact_mll_gradient(&spec, x.view(), y.view()).unwrap();
        assert!((g.noise_variance - 0.25).abs() < 1e-14);
    }

    #[test]
    fn exact_gradient_matches_finite_differences_of_exact_mll() {
        let n = 40;
        let x = random_inputs(n, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = Array1::from_shape_fn(n, |_| rng.gen::<f64>() * 2.0 - 1.0);
        let spec = test_spec(KernelFamily::Matern52);
        let g = exact_mll_gradient(&spec, x.view(), y.view()).unwrap();
        let flat = [
            (HyperParam::MeanConstant, g.mean_constant),
            (HyperParam::Lengthscale(0), g.lengthscales[0]),
            (HyperParam::Lengthscale(1), g.lengthscales[1]),
            (HyperParam::Outputscale, g.outputscale),
            (HyperParam::NoiseVariance, g.noise_variance),
        ];
        for (param, analytic) in flat {
            let h = 1e-5 * param_value(&spec, param).abs().max(1e-3);
            let lp = exact_mll(&perturbed(&spec, param, h), x.view(), y.view()).unwrap();
            let lm = exact_mll(&perturbed(&spec, param, -h), x.view(), y.view()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (analytic - fd).abs() <= 1e-4 * fd.abs().max(1e-6),
                "{param:?}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn stochastic_estimate_is_close_with_many_probes() {
        let n = 30;
        let x = random_inputs(n, 2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = Array1::from_shape_fn(n, |_| rng.gen::<f64>() * 2.0 - 1.0);
        let spec = test_spec(KernelFamily::Matern52);
        let exact = exact_mll_gradient(&spec, x.view(), y.view()).unwrap();
        let probes = TraceProbeSet::rademacher(y.view(), spec.mean_constant(), 4000, 12);
        let stop = StoppingCriteria::new(1e-11, 1, 10_000).unwrap();
        let solver = SolverChoice::AlternatingProjection {
            batch_size: 10,
            rule: SelectionRule::GaussSouthwell,
        };
        let (est, _) = mll_gradient_estimate(&spec, x.view(), &probes, &solver, &stop, 64)
            .unwrap();
        let ev = exact.to_vec();
        let gv = est.to_vec();
        let num: f64 = ev
            .iter()
            .zip(&gv)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = ev.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num <= 0.05 * den, "relative deviation {}", num / den);
    }

    #[test]
    fn gradient_estimates_are_solver_agnostic() {
        let n = 50;
        let x = random_inputs(n, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let y = Array1::from_shape_fn(n, |_| rng.gen::<f64>() * 2.0 - 1.0);
        let spec = test_spec(KernelFamily::Matern52);
        let probes = TraceProbeSet::rademacher(y.view(), spec.mean_constant(), 8, 15);
        let stop = StoppingCriteria::new(1e-8, 1, 10_000).unwrap();
        let ap = SolverChoice::AlternatingProjection {
            batch_size: 16,
            rule: SelectionRule::GaussSouthwell,
        };
        let cgc = SolverChoice::ConjugateGradient {
            preconditioner_rank: 10,
        };
        let (ga, _) = mll_gradient_estimate(&spec, x.view(), &probes, &ap, &stop, 64).unwrap();
        let (gc, _) = mll_gradient_estimate(&spec, x.view(), &probes, &cgc, &stop, 64).unwrap();
        let av = ga.to_vec();
        let cv = gc.to_vec();
        let num: f64 = av
            .iter()
            .zip(&cv)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = av.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num <= 1e-5 * den, "solver disagreement {}", num / den);
    }

    #[test]
    fn probe_set_with_wrong_mean_is_rejected() {
        let x = random_inputs(8, 2, 16);
        let spec = test_spec(KernelFamily::Matern52);
        let y = Array1::<f64>::zeros(8);
        let probes = TraceProbeSet::rademacher(y.view(), 0.0, 2, 17);
        let stop = StoppingCriteria::new(1e-6, 1, 100).unwrap();
        let solver = SolverChoice::ConjugateGradient {
            preconditioner_rank: 0,
        };
        // spec has mean 0.2, probes were centered with 0.0
        assert!(matches!(
            mll_gradient_estimate(&spec, x.view(), &probes, &solver, &stop, 64),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn spec_values_round_trip() {
        let spec = test_spec(KernelFamily::Matern32);
        let values = KernelSpecValues::from(&spec);
        let back: KernelSpec<f64> = values.to_spec().unwrap();
        assert_eq!(spec, back);
    }
}
