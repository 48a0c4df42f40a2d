//! Dataset ingestion and synthesis: CSV parsing, seeded shuffle/split,
//! standardization from training-split statistics only, and synthetic
//! datasets drawn from a GP prior.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{dense_kernel_matrix, KernelFamily, KernelSpec};
use crate::linalg::cholesky_in_place;
use crate::scalar::Scalar;

/// Above this size, synthetic draws switch from an exact dense-Cholesky
/// sample to a random-feature approximation.
pub const DENSE_SAMPLE_LIMIT: usize = 5000;

const RFF_FEATURES: usize = 2048;

/// Standardized features/labels with train/test split metadata. Feature
/// and label statistics come from the training split only.
#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    pub x: Array2<F>,
    pub y: Array1<F>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl<F: Scalar> Dataset<F> {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    fn gather_x(&self, idx: &[usize]) -> Array2<F> {
        let mut out = Array2::zeros((idx.len(), self.dims()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&self.x.row(i));
        }
        out
    }

    fn gather_y(&self, idx: &[usize]) -> Array1<F> {
        idx.iter().map(|&i| self.y[i]).collect()
    }

    pub fn train_x(&self) -> Array2<F> {
        self.gather_x(&self.train)
    }

    pub fn train_y(&self) -> Array1<F> {
        self.gather_y(&self.train)
    }

    pub fn test_x(&self) -> Array2<F> {
        self.gather_x(&self.test)
    }

    pub fn test_y(&self) -> Array1<F> {
        self.gather_y(&self.test)
    }
}

/// Shuffle, split, and standardize raw data. Labels are z-scored with
/// training-split statistics; features likewise when
/// `standardize_features` is set (constant features are centered only).
pub fn standardize_split<F: Scalar>(
    mut x: Array2<F>,
    mut y: Array1<F>,
    split_ratio: f64,
    seed: u64,
    standardize_features: bool,
) -> Result<Dataset<F>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two rows to split, got {n}"
        )));
    }
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split ratio must be in (0, 1), got {split_ratio}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * split_ratio).floor() as usize).clamp(1, n - 1);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let label_mean =
        train.iter().map(|&i| y[i].as_f64()).sum::<f64>() / n_train as f64;
    let label_var = train
        .iter()
        .map(|&i| (y[i].as_f64() - label_mean).powi(2))
        .sum::<f64>()
        / n_train as f64;
    let label_std = label_var.sqrt();
    if label_std < 1e-12 {
        return Err(Error::InvalidInput(
            "training labels are constant; cannot standardize".into(),
        ));
    }
    let mean_f = F::cast(label_mean);
    let inv_std = F::cast(1.0 / label_std);
    y.mapv_inplace(|v| (v - mean_f) * inv_std);

    if standardize_features {
        for c in 0..x.ncols() {
            let mean = train.iter().map(|&i| x[(i, c)].as_f64()).sum::<f64>() / n_train as f64;
            let var = train
                .iter()
                .map(|&i| (x[(i, c)].as_f64() - mean).powi(2))
                .sum::<f64>()
                / n_train as f64;
            let std = var.sqrt();
            let mean = F::cast(mean);
            let scale = if std < 1e-12 {
                F::one()
            } else {
                F::cast(1.0 / std)
            };
            for r in 0..n {
                x[(r, c)] = (x[(r, c)] - mean) * scale;
            }
        }
    }

    Ok(Dataset {
        x,
        y,
        train,
        test,
        label_mean,
        label_std,
    })
}

/// Parse a CSV with a header row; every column but the last is a feature,
/// the last is the target. Malformed or non-finite values report their
/// line number.
pub fn load_dataset<F: Scalar>(
    path: &Path,
    split_ratio: f64,
    seed: u64,
    standardize_features: bool,
) -> Result<Dataset<F>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::DataFormat {
            line: 1,
            message: format!("need at least one feature column and a target, got {width} columns"),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map_or(rows.len() + 2, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::DataFormat {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let mut row = Vec::with_capacity(width);
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::DataFormat {
                line,
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::DataFormat {
                    line,
                    message: format!("non-finite value '{field}'"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "dataset has {n} rows; need at least 2"
        )));
    }
    let d = width - 1;
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..d {
            x[(i, j)] = F::cast(row[j]);
        }
        y[i] = F::cast(row[d]);
    }
    standardize_split(x, y, split_ratio, seed, standardize_features)
}

/// One exact draw `y ~ N(mu, K)` at the given inputs via dense Cholesky.
/// A tiny diagonal jitter keeps the factorization alive when the noise is
/// zero.
pub fn gp_prior_sample<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    seed: u64,
) -> Result<Array1<F>> {
    let n = x.nrows();
    let mut k = dense_kernel_matrix(spec, x)?;
    let mut factored = k.clone();
    if cholesky_in_place(&mut factored).is_err() {
        let jitter = F::cast(1e-10) * (spec.outputscale() + spec.noise_variance()).max(F::one());
        for i in 0..n {
            k[(i, i)] = k[(i, i)] + jitter;
        }
        factored = k;
        cholesky_in_place(&mut factored)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Array2::from_shape_fn((n, 1), |_| F::standard_normal(&mut rng));
    let mut y = factored.dot(&u).column(0).to_owned();
    let mu = spec.mean_constant();
    y.mapv_inplace(|v| v + mu);
    Ok(y)
}

/// Approximate draw through random Fourier features: Gaussian frequencies
/// for the RBF kernel, multivariate-t frequencies (2 nu degrees of
/// freedom) for the Matern families, plus the observational noise.
fn gp_prior_sample_rff<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    seed: u64,
) -> Result<Array1<F>> {
    let n = x.nrows();
    let d = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dof = match spec.family() {
        KernelFamily::Matern52 => Some(5.0),
        KernelFamily::Matern32 => Some(3.0),
        KernelFamily::Rbf => None,
    };
    let chi = dof.map(|df| ChiSquared::new(df).expect("valid dof"));
    let inv_ls: Vec<f64> = spec.lengthscales().iter().map(|l| 1.0 / l.as_f64()).collect();

    let mut omega = Array2::<f64>::zeros((RFF_FEATURES, d));
    let mut phase = vec![0.0_f64; RFF_FEATURES];
    let mut weight = vec![0.0_f64; RFF_FEATURES];
    for j in 0..RFF_FEATURES {
        let scale = match &chi {
            Some(c) => {
                let u: f64 = c.sample(&mut rng);
                (dof.unwrap() / u).sqrt()
            }
            None => 1.0,
        };
        for (m, il) in inv_ls.iter().enumerate() {
            omega[(j, m)] = f64::standard_normal(&mut rng) * il * scale;
        }
        phase[j] = f64::uniform_01(&mut rng) * std::f64::consts::TAU;
        weight[j] = f64::standard_normal(&mut rng);
    }

    let amp = (2.0 * spec.outputscale().as_f64() / RFF_FEATURES as f64).sqrt();
    let sigma = spec.noise_variance().as_f64().sqrt();
    let mu = spec.mean_constant().as_f64();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..RFF_FEATURES {
            let mut arg = phase[j];
            for m in 0..d {
                arg += omega[(j, m)] * x[(i, m)].as_f64();
            }
            acc += weight[j] * arg.cos();
        }
        let noise = sigma * f64::standard_normal(&mut rng);
        y[i] = F::cast(mu + amp * acc + noise);
    }
    Ok(y)
}

/// Raw synthetic data: inputs uniform on `[0, 1]^d`, labels drawn from the
/// GP prior under `spec`. Exact sampling up to [`DENSE_SAMPLE_LIMIT`]
/// points, random-feature approximation beyond.
pub fn synth_raw<F: Scalar>(
    n: usize,
    d: usize,
    spec: &KernelSpec<F>,
    seed: u64,
) -> Result<(Array2<F>, Array1<F>)> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "synthetic dataset needs positive sizes, got n={n}, d={d}"
        )));
    }
    if spec.dims() != d {
        return Err(Error::ShapeMismatch(format!(
            "generator kernel has {} lengthscales but d={d}",
            spec.dims()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| F::uniform_01(&mut rng));
    let label_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    let y = if n <= DENSE_SAMPLE_LIMIT {
        gp_prior_sample(spec, x.view(), label_seed)?
    } else {
        gp_prior_sample_rff(spec, x.view(), label_seed)?
    };
    Ok((x, y))
}

/// Synthetic dataset run through the same standardize/split pipeline as
/// loaded data.
pub fn synth_dataset<F: Scalar>(
    n: usize,
    d: usize,
    spec: &KernelSpec<F>,
    seed: u64,
    split_ratio: f64,
    standardize_features: bool,
) -> Result<Dataset<F>> {
    let (x, y) = synth_raw(n, d, spec, seed)?;
    let split_seed = seed ^ 0x5851_f42d_4c95_7f2d;
    standardize_split(x, y, split_ratio, split_seed, standardize_features)
}

/// Write raw rows as CSV (header `x0..x{d-1},y`), full precision.
pub fn write_raw_csv<F: Scalar, W: Write>(
    x: &Array2<F>,
    y: &Array1<F>,
    mut w: W,
) -> Result<()> {
    let d = x.ncols();
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    writeln!(w, "{},y", header.join(","))?;
    for i in 0..x.nrows() {
        for j in 0..d {
            write!(w, "{:.16e},", x[(i, j)].as_f64())?;
        }
        writeln!(w, "{:.16e}", y[i].as_f64())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn spec(d: usize) -> KernelSpec<f64> {
        KernelSpec::isotropic(KernelFamily::Matern52, d, 0.5, 1.2, 0.3, 0.4).unwrap()
    }

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn ten_rows_split_eight_two() {
        let mut body = String::from("a,b,target\n");
        for i in 0..10 {
            body.push_str(&format!("{}.0,{}.5,{}\n", i, i, i * i));
        }
        let f = write_temp_csv(&body);
        let ds: Dataset<f64> = load_dataset(f.path(), 0.8, 7, true).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 2);
        assert_eq!(ds.dims(), 2);
    }

    #[test]
    fn training_labels_are_standardized() {
        let (x, y) = synth_raw(64, 3, &spec(3), 1).unwrap();
        let ds = standardize_split(x, y, 0.8, 2, true).unwrap();
        let ty = ds.train_y();
        let mean: f64 = ty.iter().sum::<f64>() / ty.len() as f64;
        let var: f64 = ty.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ty.len() as f64;
        assert!(mean.abs() <= 1e-8, "train label mean {mean}");
        assert!((var.sqrt() - 1.0).abs() <= 1e-6, "train label std {}", var.sqrt());
    }

    #[test]
    fn same_seed_same_split() {
        let (x, y) = synth_raw(50, 2, &spec(2), 3).unwrap();
        let a = standardize_split(x.clone(), y.clone(), 0.8, 9, true).unwrap();
        let b = standardize_split(x.clone(), y.clone(), 0.8, 9, true).unwrap();
        let c = standardize_split(x, y, 0.8, 10, true).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let f = write_temp_csv("a,b,y\n1.0,2.0,3.0\n1.0,oops,3.0\n");
        let err = load_dataset::<f64>(f.path(), 0.5, 0, false).unwrap_err();
        match err {
            Error::DataFormat { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nan_value_is_rejected() {
        let f = write_temp_csv("a,y\n1.0,2.0\nNaN,3.0\n");
        let err = load_dataset::<f64>(f.path(), 0.5, 0, false).unwrap_err();
        assert!(matches!(err, Error::DataFormat { line: 3, .. }));
    }

    #[test]
    fn standardization_ignores_test_labels() {
        // Adversarial: test rows carry a huge constant label. If test rows
        // leaked into the statistics, the training labels could not be
        // standardized to mean 0 / std 1.
        let n = 40;
        let mut x = Array2::<f64>::zeros((n, 1));
        let mut y = Array1::<f64>::zeros(n);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        for i in 0..n {
            x[(i, 0)] = rng.gen();
            y[i] = rng.gen::<f64>() * 3.0;
        }
        let ds_probe = standardize_split(x.clone(), y.clone(), 0.75, 5, false).unwrap();
        for &i in &ds_probe.test {
            y[i] = 1e6;
        }
        let ds = standardize_split(x, y.clone(), 0.75, 5, false).unwrap();
        assert_eq!(ds.train, ds_probe.train);
        let expect_mean =
            ds.train.iter().map(|&i| y[i]).sum::<f64>() / ds.train.len() as f64;
        assert!((ds.label_mean - expect_mean).abs() < 1e-12);
        let ty = ds.train_y();
        let mean: f64 = ty.iter().sum::<f64>() / ty.len() as f64;
        assert!(mean.abs() < 1e-8);
    }

    #[test]
    fn synthetic_draws_are_reproducible() {
        let s = spec(2);
        let (xa, ya) = synth_raw(30, 2, &s, 11).unwrap();
        let (xb, yb) = synth_raw(30, 2, &s, 11).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(ya, yb);
        let noiseless = s.with_noise_variance(0.0).unwrap();
        let (_, yc) = synth_raw(30, 2, &noiseless, 11).unwrap();
        let (_, yd) = synth_raw(30, 2, &noiseless, 11).unwrap();
        assert_eq!(yc, yd);
    }

    #[test]
    fn single_point_draw_variance_matches_kernel() {
        let s = spec(2);
        let x = Array2::from_elem((1, 2), 0.3);
        let draws = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..draws {
            let y = gp_prior_sample(&s, x.view(), seed as u64).unwrap();
            sum += y[0];
            sumsq += y[0] * y[0];
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        let expect = 1.2 + 0.3; // outputscale + noise
        assert!(
            (var - expect).abs() <= 0.05 * expect,
            "sample variance {var} vs {expect}"
        );
        assert!((mean - 0.4).abs() < 0.05);
    }

    #[test]
    fn distant_points_are_uncorrelated() {
        let s = KernelSpec::isotropic(KernelFamily::Matern52, 1, 0.05, 1.0, 0.01, 0.0).unwrap();
        let x = ndarray::array![[0.0], [1000.0]];
        let draws = 4000;
        let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
        let (mut q1, mut q2) = (0.0, 0.0);
        for seed in 0..draws {
            let y = gp_prior_sample(&s, x.view(), seed as u64).unwrap();
            s1 += y[0];
            s2 += y[1];
            s12 += y[0] * y[1];
            q1 += y[0] * y[0];
            q2 += y[1] * y[1];
        }
        let n = draws as f64;
        let cov = s12 / n - (s1 / n) * (s2 / n);
        let v1 = q1 / n - (s1 / n).powi(2);
        let v2 = q2 / n - (s2 / n).powi(2);
        let corr = cov / (v1 * v2).sqrt();
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn rff_path_has_sane_scale() {
        let s = spec(2);
        let n = DENSE_SAMPLE_LIMIT + 200;
        let (x, y) = synth_raw(n, 2, &s, 13).unwrap();
        assert_eq!(x.nrows(), n);
        let mean: f64 = y.iter().sum::<f64>() / n as f64;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // Prior marginal variance is outputscale + noise = 1.5; the draw
        // averages over correlated points so allow a generous band.
        assert!((mean - 0.4).abs() < 0.6, "mean {mean}");
        assert!(var > 0.3 && var < 4.0, "variance {var}");
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let s = spec(2);
        let (x, y) = synth_raw(20, 2, &s, 14).unwrap();
        let mut buf = Vec::new();
        write_raw_csv(&x, &y, &mut buf).unwrap();
        let f = write_temp_csv(std::str::from_utf8(&buf).unwrap());
        let ds: Dataset<f64> = load_dataset(f.path(), 0.5, 0, false).unwrap();
        assert_eq!(ds.n(), 20);
        // Unstandardized load: labels got z-scored, features untouched.
        for i in 0..20 {
            assert!((ds.x[(i, 0)] - x[(i, 0)]).abs() < 1e-15);
        }
    }
}
