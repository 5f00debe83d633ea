//! Block-diagonal symmetric matrices and their Cholesky factors.

use ndarray::Array2;

use crate::error::{Result, TflrError};

/// A pivot is rejected when it falls below this fraction of the original
/// diagonal entry.
const PIVOT_RTOL: f64 = 1e-12;

/// A symmetric matrix stored as its diagonal blocks. A dense matrix is the
/// one-block case.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    blocks: Vec<Array2<f64>>,
    dim: usize,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<Array2<f64>>) -> Result<Self> {
        let mut dim = 0;
        for (k, b) in blocks.iter().enumerate() {
            if b.nrows() != b.ncols() {
                return Err(TflrError::DimensionMismatch(format!(
                    "block {k} is {}x{}, expected square",
                    b.nrows(),
                    b.ncols()
                )));
            }
            dim += b.nrows();
        }
        let blocks = blocks
            .into_iter()
            .map(|b| b.as_standard_layout().into_owned())
            .collect();
        Ok(BlockDiagonal { blocks, dim })
    }

    pub fn dense(matrix: Array2<f64>) -> Result<Self> {
        Self::new(vec![matrix])
    }

    /// `count` zero blocks of size `size`.
    pub fn zeros(count: usize, size: usize) -> Self {
        BlockDiagonal {
            blocks: vec![Array2::zeros((size, size)); count],
            dim: count * size,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.blocks
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        let mut off = 0;
        for b in &self.blocks {
            let s = b.nrows();
            out.slice_mut(ndarray::s![off..off + s, off..off + s])
                .assign(b);
            off += s;
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        let mut off = 0;
        for b in &self.blocks {
            let s = b.nrows();
            for i in 0..s {
                out[off + i] = (0..s).map(|j| b[[i, j]] * v[off + j]).sum();
            }
            off += s;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.diag().sum()).sum()
    }

    /// Largest `|G_ij - G_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for b in &self.blocks {
            for ((i, j), &v) in b.indexed_iter() {
                scale = scale.max(v.abs());
                if j > i {
                    worst = worst.max((v - b[[j, i]]).abs());
                }
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    /// Adds `rel * trace(G) / dim` to every diagonal entry.
    pub fn add_ridge(&mut self, rel: f64) {
        let shift = rel * self.trace() / self.dim.max(1) as f64;
        for b in &mut self.blocks {
            b.diag_mut().mapv_inplace(|v| v + shift);
        }
    }

    /// Adds `rel * trace(block) / size` to each block's diagonal.
    pub fn add_block_ridge(&mut self, rel: f64) {
        for b in &mut self.blocks {
            let shift = rel * b.diag().sum() / b.nrows().max(1) as f64;
            b.diag_mut().mapv_inplace(|v| v + shift);
        }
    }

    /// Factors every block as `L L^T` and returns `L^{-T}` as a dense
    /// column-major `dim x dim` array (block-diagonal, upper triangular).
    pub(crate) fn inverse_cholesky_transpose(&self) -> Result<Vec<f64>> {
        let m = self.dim;
        let mut j = vec![0.0; m * m];
        let mut off = 0;
        for (k, block) in self.blocks.iter().enumerate() {
            let s = block.nrows();
            let l = cholesky_lower(block).ok_or(TflrError::NotPositiveDefinite { block: k })?;
            let linv = invert_lower(&l, s);
            // L^{-T}[r][c] = L^{-1}[c][r]; column-major storage of the result.
            for c in 0..s {
                for r in 0..=c {
                    j[(off + c) * m + off + r] = linv[c * s + r];
                }
            }
            off += s;
        }
        Ok(j)
    }
}

/// Row-major lower Cholesky factor, or `None` when a pivot collapses.
pub(crate) fn cholesky_lower(a: &Array2<f64>) -> Option<Vec<f64>> {
    let n = a.nrows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                let diag = a[[i, i]];
                if !s.is_finite() || s <= PIVOT_RTOL * diag {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Inverse of a row-major lower triangular matrix, also row-major.
fn invert_lower(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for c in 0..n {
        inv[c * n + c] = 1.0 / l[c * n + c];
        for r in c + 1..n {
            let mut s = 0.0;
            for k in c..r {
                s -= l[r * n + k] * inv[k * n + c];
            }
            inv[r * n + c] = s / l[r * n + r];
        }
    }
    inv
}
