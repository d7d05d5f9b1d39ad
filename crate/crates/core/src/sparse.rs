//! Compressed sparse row storage for the admittance matrix.

use num_complex::Complex64;

use crate::error::{check_dim, Result};

/// Square complex matrix in compressed sparse row form.
///
/// Column indices within a row are sorted and unique. The diagonal of every
/// row is always stored, even when its value is zero, so that a row of an
/// admittance matrix always has `degree + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseComplexMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseComplexMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        for k in 0..dim {
            triplets.push((k, k, Complex64::new(0.0, 0.0)));
        }
        triplets.sort_by_key(|t| (t.0, t.1));

        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside a {dim}x{dim} matrix");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for k in 0..dim {
            row_ptr[k + 1] += row_ptr[k];
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored entries of row `k` as `(column, value)` pairs.
    pub fn row(&self, k: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[k]..self.row_ptr[k + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn row_nnz(&self, k: usize) -> usize {
        self.row_ptr[k + 1] - self.row_ptr[k]
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(pos) => self.vals[range.start + pos],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Euclidean norm of row `k`, i.e. `‖Y^(k)‖₂`.
    pub fn row_norm(&self, k: usize) -> f64 {
        self.row(k).map(|(_, v)| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `Y v`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        check_dim(self.dim, v.len())?;
        Ok((0..self.dim).map(|k| self.row(k).map(|(j, y)| y * v[j]).sum()).collect())
    }

    /// True when the sparsity pattern equals its transpose.
    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.dim).all(|r| {
            self.row(r).all(|(c, _)| {
                let range = self.row_ptr[c]..self.row_ptr[c + 1];
                self.cols[range].binary_search(&r).is_ok()
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn duplicates_are_summed_and_diagonal_kept() {
        let m =
            SparseComplexMatrix::from_triplets(3, vec![(0, 1, c(1.0, 0.0)), (0, 1, c(0.5, 1.0)), (2, 0, c(0.0, -2.0))]);
        assert_eq!(m.get(0, 1), c(1.5, 1.0));
        assert_eq!(m.row_nnz(1), 1);
        assert_eq!(m.get(1, 1), c(0.0, 0.0));
        assert_eq!(m.nnz(), 5);
        assert!(!m.is_structurally_symmetric());
    }

    #[test]
    fn mul_vec_checks_dimension() {
        let m = SparseComplexMatrix::from_triplets(2, vec![]);
        assert!(m.mul_vec(&[c(1.0, 0.0)]).is_err());
    }
}
