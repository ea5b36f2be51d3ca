//! Minimal compressed-sparse-row matrices with deterministic layout.
//!
//! Assembly accumulates triplets in element order and converts to CSR with
//! sorted column indices, so identical inputs always produce bitwise
//! identical matrices.

use crate::error::{Error, Result};

/// Real sparse matrix in CSR format. Column indices are strictly increasing
/// within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// `y = self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// `y += alpha * self * x`.
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] += alpha * acc;
        }
    }

    /// Quadratic / bilinear form `x^T self y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut row_acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                row_acc += v * y[j];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut builder = CooBuilder::new(self.ncols, self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                builder.push(j, i, v);
            }
        }
        builder.build()
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= alpha;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Entry accessor; zero for positions outside the stored pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `self + alpha * other`, requiring identical shapes.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                got: other.nrows,
            });
        }
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                match (ca.get(p), cb.get(q)) {
                    (Some(&ja), Some(&jb)) if ja == jb => {
                        col_idx.push(ja);
                        values.push(va[p] + alpha * vb[q]);
                        p += 1;
                        q += 1;
                    }
                    (Some(&ja), Some(&jb)) if ja < jb => {
                        col_idx.push(ja);
                        values.push(va[p]);
                        p += 1;
                    }
                    (Some(_), Some(&jb)) => {
                        col_idx.push(jb);
                        values.push(alpha * vb[q]);
                        q += 1;
                    }
                    (Some(&ja), None) => {
                        col_idx.push(ja);
                        values.push(va[p]);
                        p += 1;
                    }
                    (None, Some(&jb)) => {
                        col_idx.push(jb);
                        values.push(alpha * vb[q]);
                        q += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i][j] = v;
            }
        }
        dense
    }
}

/// Triplet accumulator. Duplicates are summed in index order.
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        CooBuilder {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> CsrMatrix {
        // Stable sort keeps duplicate contributions in insertion order, so
        // the summation order (and thus rounding) is deterministic.
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut iter = self.entries.into_iter().peekable();
        for i in 0..self.nrows {
            while let Some(&(ei, ej, _)) = iter.peek() {
                if ei != i {
                    break;
                }
                let mut acc = 0.0;
                while let Some(&(fi, fj, fv)) = iter.peek() {
                    if fi == i && fj == ej {
                        acc += fv;
                        iter.next();
                    } else {
                        break;
                    }
                }
                col_idx.push(ej);
                values.push(acc);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Assembles a block matrix from scaled copies of `n x n` blocks laid out on
/// a `blocks x blocks` grid. Each placement is `(block_row, block_col,
/// coefficient, matrix)`.
pub fn block_compose(
    blocks: usize,
    n: usize,
    placements: &[(usize, usize, f64, &CsrMatrix)],
) -> CsrMatrix {
    let dim = blocks * n;
    let nnz: usize = placements.iter().map(|p| p.3.nnz()).sum();
    let mut builder = CooBuilder::with_capacity(dim, dim, nnz);
    for &(bi, bj, coeff, mat) in placements {
        assert_eq!(mat.nrows(), n);
        assert_eq!(mat.ncols(), n);
        if coeff == 0.0 {
            continue;
        }
        let (roff, coff) = (bi * n, bj * n);
        for i in 0..n {
            let (cols, vals) = mat.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                builder.push(roff + i, coff + j, coeff * v);
            }
        }
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrMatrix {
        let mut b = CooBuilder::new(3, 3);
        b.push(0, 0, 2.0);
        b.push(1, 2, -1.0);
        b.push(2, 1, 4.0);
        b.push(0, 0, 1.0); // duplicate, summed
        b.build()
    }

    #[test]
    fn coo_builder_sums_duplicates_and_sorts() {
        let m = small();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 2), -1.0);
        assert_eq!(m.get(2, 1), 4.0);
        assert_eq!(m.get(2, 2), 0.0);
    }

    #[test]
    fn matvec_and_bilinear_agree_with_dense() {
        let m = small();
        let x = [1.0, 2.0, 3.0];
        let y = m.mul_vec(&x);
        assert_eq!(y, vec![3.0, -3.0, 8.0]);
        let q = m.bilinear(&[1.0, 1.0, 1.0], &x);
        assert!((q - (3.0 - 3.0 + 8.0)).abs() < 1e-15);
    }

    #[test]
    fn add_scaled_and_transpose() {
        let m = small();
        let s = m.add_scaled(2.0, &m.transpose()).unwrap();
        assert_eq!(s.get(0, 0), 9.0);
        assert_eq!(s.get(1, 2), -1.0 + 2.0 * 4.0);
        assert_eq!(s.get(2, 1), 4.0 + 2.0 * -1.0);
    }

    #[test]
    fn block_compose_places_blocks() {
        let m = small();
        let big = block_compose(2, 3, &[(0, 0, 1.0, &m), (1, 0, -2.0, &m)]);
        assert_eq!(big.nrows(), 6);
        assert_eq!(big.get(0, 0), 3.0);
        assert_eq!(big.get(3, 0), -6.0);
        assert_eq!(big.get(3, 3), 0.0);
    }
}
