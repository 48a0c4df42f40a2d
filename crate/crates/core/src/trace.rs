//! Per-epoch convergence records shared by both solvers.

use ndarray::ArrayView2;
use serde::Serialize;
use std::io::Write;

use crate::scalar::Scalar;

/// One row of a solver trace. For the alternating-projection solver an
/// "epoch" is one sweep of `m` inner iterations; for conjugate gradients
/// both `epoch` and `inner_iters` count CG iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub inner_iters: usize,
    pub avg_rel_residual: f64,
    pub frobenius_residual: f64,
    pub cumulative_flops: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub records: Vec<EpochRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// First epoch whose average relative residual is strictly below `eps`.
    pub fn epochs_to_tolerance(&self, eps: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.avg_rel_residual < eps)
            .map(|r| r.epoch)
    }

    /// Cumulative FLOPs at the first epoch below `eps`.
    pub fn flops_to_tolerance(&self, eps: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.avg_rel_residual < eps)
            .map(|r| r.cumulative_flops)
    }

    /// Zero out wall-clock fields so repeated runs are byte-identical.
    pub fn zero_wall_times(&mut self) {
        for r in &mut self.records {
            r.wall_time_s = 0.0;
        }
    }

    /// CSV export; floats are written with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "epoch,inner_iters,avg_rel_residual,frobenius_residual,cumulative_flops,wall_time_s"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{},{:.16e}",
                r.epoch,
                r.inner_iters,
                r.avg_rel_residual,
                r.frobenius_residual,
                r.cumulative_flops,
                r.wall_time_s
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Column-wise residual summary: `(avg_rel, frobenius)` where
/// `avg_rel = (1/c) Σ_i ||r_i|| / ||b_i||` over the RHS columns.
/// Columns with a zero RHS norm contribute 0.
pub fn residual_summary<F: Scalar>(r: ArrayView2<F>, b_norms: &[f64]) -> (f64, f64) {
    debug_assert_eq!(r.ncols(), b_norms.len());
    let mut avg = 0.0;
    let mut frob_sq = 0.0;
    for (j, col) in r.columns().into_iter().enumerate() {
        let norm_sq: f64 = col.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        frob_sq += norm_sq;
        if b_norms[j] > 0.0 {
            avg += norm_sq.sqrt() / b_norms[j];
        }
    }
    (avg / r.ncols() as f64, frob_sq.sqrt())
}

/// Per-column Euclidean norms of the right-hand side, in f64.
pub fn column_norms<F: Scalar>(b: ArrayView2<F>) -> Vec<f64> {
    b.columns()
        .into_iter()
        .map(|col| col.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect()
}
