//! Sequential block partition of the index set and the cache of Cholesky
//! factors of the principal submatrices `K[I, I]`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::kernels::{kernel_block, KernelSpec};
use crate::linalg::{solve_lower_in_place, solve_lower_transpose_in_place};
use crate::scalar::Scalar;

/// Contiguous blocks `I_1, ..., I_m` covering `0..n`; every block has size
/// `batch_size` except possibly the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    n: usize,
    batch_size: usize,
    blocks: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn new(n: usize, batch_size: usize) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::InvalidInput(format!(
                "partition needs positive sizes, got n={n}, b={batch_size}"
            )));
        }
        if batch_size > n {
            return Err(Error::InvalidInput(format!(
                "batch size {batch_size} exceeds the number of points {n}"
            )));
        }
        let blocks = (0..n.div_ceil(batch_size))
            .map(|j| j * batch_size..((j + 1) * batch_size).min(n))
            .collect();
        Ok(Self {
            n,
            batch_size,
            blocks,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of blocks `m`.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        self.blocks[j].clone()
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.blocks.iter().cloned()
    }

    pub fn indices(&self, j: usize) -> Vec<usize> {
        self.blocks[j].clone().collect()
    }
}

/// Per-block lower Cholesky factors of `K[I, I]`, tagged with the
/// fingerprint of the [`KernelSpec`] they were built from.
#[derive(Debug, Clone)]
pub struct CholeskyCache<F: Scalar> {
    factors: Vec<Array2<F>>,
    spec_fingerprint: u64,
    build_flops: u64,
}

impl<F: Scalar> CholeskyCache<F> {
    pub fn num_blocks(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, j: usize) -> &Array2<F> {
        &self.factors[j]
    }

    pub fn spec_fingerprint(&self) -> u64 {
        self.spec_fingerprint
    }

    pub fn is_fresh(&self, spec: &KernelSpec<F>) -> bool {
        self.spec_fingerprint == spec.fingerprint()
    }

    /// FLOPs charged for building this cache: b^3/3 per block, which sums
    /// to roughly n b^2 / 3.
    pub fn build_flops(&self) -> u64 {
        self.build_flops
    }
}

/// Factor every `K[I, I]` once. Blocks factor independently (in parallel);
/// a numerically indefinite block names itself in the error.
pub fn build_cache<F: Scalar>(
    spec: &KernelSpec<F>,
    x: ArrayView2<F>,
    partition: &BlockPartition,
) -> Result<CholeskyCache<F>> {
    if x.nrows() != partition.n() {
        return Err(Error::ShapeMismatch(format!(
            "partition covers {} points but inputs have {} rows",
            partition.n(),
            x.nrows()
        )));
    }
    let factors: Vec<Array2<F>> = partition
        .blocks()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(j, range)| {
            let idx: Vec<usize> = range.collect();
            let mut block = kernel_block(spec, x, &idx, &idx)?;
            crate::linalg::cholesky_in_place(&mut block)
                .map_err(|_| Error::BlockNotPositiveDefinite { block: j })?;
            Ok(block)
        })
        .collect::<Result<_>>()?;
    let build_flops = factors
        .iter()
        .map(|f| (f.nrows() as u64).pow(3) / 3)
        .sum();
    Ok(CholeskyCache {
        factors,
        spec_fingerprint: spec.fingerprint(),
        build_flops,
    })
}

/// `K[I_j, I_j]^{-1} @ rhs` via two triangular solves against the cached
/// factor. Fails if the cache was built for different hyperparameters.
pub fn block_solve<F: Scalar>(
    cache: &CholeskyCache<F>,
    spec: &KernelSpec<F>,
    block_index: usize,
    rhs: ArrayView2<F>,
) -> Result<Array2<F>> {
    if !cache.is_fresh(spec) {
        return Err(Error::StaleCache);
    }
    if block_index >= cache.num_blocks() {
        return Err(Error::IndexOutOfRange(format!(
            "block {block_index} out of range for {} blocks",
            cache.num_blocks()
        )));
    }
    let l = &cache.factors[block_index];
    if rhs.nrows() != l.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} rows but block {} has size {}",
            rhs.nrows(),
            block_index,
            l.nrows()
        )));
    }
    let mut u = rhs.to_owned();
    solve_lower_in_place(l, &mut u);
    solve_lower_transpose_in_place(l, &mut u);
    Ok(u)
}
