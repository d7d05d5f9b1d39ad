//! Dense reference computations used to verify the sparse production path.
//!
//! Everything here is deliberately simple: dense storage, cyclic Jacobi
//! rotations, central differences. Nothing in this module calls into the
//! sparse assembly code; it only reads model data.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::qclp::QclpProblem;

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        Self { rows: n_rows, cols: n_cols, data: rows.concat() }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| factor * x).collect() }
    }

    /// `(A + Aᵀ)/2`.
    pub fn symmetric_part(&self) -> Self {
        self.add_scaled(&self.transpose(), 1.0).scale(0.5)
    }

    fn add_scaled(&self, other: &Self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + factor * b).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Indices of rows that hold a nonzero entry in the row or the column.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        (0..self.rows).filter(|&i| (0..self.cols).any(|j| self[(i, j)] != 0.0 || self[(j, i)] != 0.0)).collect()
    }

    pub fn principal_submatrix(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    /// The principal submatrix on [`Self::nonzero_indices`]. Its spectrum
    /// plus zeros is the spectrum of the full matrix.
    pub fn compressed(&self) -> Self {
        self.principal_submatrix(&self.nonzero_indices())
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues (ascending) and eigenvectors (as columns, same order) of a
/// symmetric matrix, by cyclic Jacobi rotations.
pub fn dense_symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Oracle(format!("matrix is {}x{}, not square", n, a.cols())));
    }
    let norm = a.frobenius_norm();
    if !a.is_symmetric(1e-12 * norm.max(1.0)) {
        return Err(Error::Oracle("matrix is not symmetric".into()));
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let off = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let target = 1e-12 * norm;
    let mut sweeps = 0;
    while off(&m) > target {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::Oracle("Jacobi iteration did not converge".into()));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
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
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok((values, vectors))
}

/// Sorted eigenvalues of a symmetric matrix.
pub fn dense_symmetric_eigs(a: &DenseMatrix) -> Result<Vec<f64>> {
    dense_symmetric_eigen(a).map(|(values, _)| values)
}

/// Largest eigenvalue magnitude, computed on the compressed nonzero block.
pub fn dense_spectral_radius(a: &DenseMatrix) -> Result<f64> {
    let eigs = dense_symmetric_eigs(&a.compressed())?;
    Ok(eigs.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Smallest eigenvalue, computed on the compressed nonzero block (zero if
/// the block is smaller than the matrix).
pub fn dense_min_eig(a: &DenseMatrix) -> Result<f64> {
    let block = a.compressed();
    let eigs = dense_symmetric_eigs(&block)?;
    let min = eigs.first().copied().unwrap_or(0.0);
    Ok(if block.rows() < a.rows() { min.min(0.0) } else { min })
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Dense admittance matrix built directly from branch and shunt data.
pub fn dense_admittance(grid: &GridModel) -> Vec<Vec<Complex64>> {
    let m = grid.n_buses();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for (k, bus) in grid.buses.iter().enumerate() {
        y[k][k] += bus.shunt;
    }
    for br in &grid.branches {
        let yl = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        y[br.from][br.to] += yl;
        y[br.to][br.from] += yl;
        y[br.from][br.from] -= yl;
        y[br.to][br.to] -= yl;
    }
    y
}

/// `diag(v) conj(Y) conj(v)` by dense complex arithmetic.
pub fn dense_injections(y: &[Vec<Complex64>], v: &[Complex64]) -> Vec<Complex64> {
    (0..v.len())
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..v.len() {
                acc += y[k][j].conj() * v[j].conj();
            }
            v[k] * acc
        })
        .collect()
}

/// `Δs = s(v0 + Δv) − s(v0)` with `Δv = z[..M] + i z[M..]`.
pub fn dense_delta_power(y: &[Vec<Complex64>], v0: &[Complex64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = v0.len();
    let v: Vec<Complex64> = (0..m).map(|k| v0[k] + Complex64::new(z[k], z[m + k])).collect();
    let s0 = dense_injections(y, v0);
    let s1 = dense_injections(y, &v);
    let ds: Vec<Complex64> = s1.iter().zip(&s0).map(|(a, b)| a - b).collect();
    (ds.iter().map(|d| d.re).collect(), ds.iter().map(|d| d.im).collect())
}

/// The symmetrized power Hessians of bus `k`, assembled from the block
/// matrices of the row-restricted admittance `Y^(k)`:
/// `H_r = [[Re, −Im], [Im, Re]]`, `H_q = [[−Im, −Re], [Re, −Im]]`.
pub fn dense_power_hessians(y: &[Vec<Complex64>], k: usize) -> (DenseMatrix, DenseMatrix) {
    let m = y.len();
    let mut re = DenseMatrix::zeros(m, m);
    let mut im = DenseMatrix::zeros(m, m);
    for j in 0..m {
        re[(k, j)] = y[k][j].re;
        im[(k, j)] = y[k][j].im;
    }
    let block = |a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix, d: &DenseMatrix| {
        let mut h = DenseMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                h[(i, j)] = a[(i, j)];
                h[(i, m + j)] = b[(i, j)];
                h[(m + i, j)] = c[(i, j)];
                h[(m + i, m + j)] = d[(i, j)];
            }
        }
        h
    };
    let neg_re = re.scale(-1.0);
    let neg_im = im.scale(-1.0);
    let hr = block(&re, &neg_im, &im, &re);
    let hq = block(&neg_im, &neg_re, &re, &neg_im);
    (hr.symmetric_part(), hq.symmetric_part())
}

/// The quadratic part of row `i` as a dense `2M × 2M` matrix.
pub fn dense_quad(problem: &QclpProblem, row: usize) -> DenseMatrix {
    let n_z = problem.n_z();
    let mut p = DenseMatrix::zeros(n_z, n_z);
    for &(r, c, v) in problem.constraints[row].quad.entries() {
        p[(r, c)] += v;
    }
    p
}

/// Row values `xᵀP_i x + p_iᵀx + ω_i` with every `P_i` materialized densely.
pub fn dense_constraint_eval(problem: &QclpProblem, x: &[f64]) -> Vec<f64> {
    let n_z = problem.n_z();
    let mut lin = vec![0.0; problem.n_x()];
    (0..problem.n_rows())
        .map(|i| {
            let c = &problem.constraints[i];
            lin.iter_mut().for_each(|v| *v = 0.0);
            for &(j, v) in &c.lin {
                lin[j] += v;
            }
            let quad = dense_quad(problem, i).quad_form(&x[..n_z]);
            quad + lin.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c.omega
        })
        .collect()
}

/// `(αD, αD − P)` for row `i`, with `D` the indicator of `support`.
pub fn dense_split_matrices(
    problem: &QclpProblem,
    row: usize,
    alpha: f64,
    support: &[usize],
) -> (DenseMatrix, DenseMatrix) {
    let n_z = problem.n_z();
    let mut d = vec![0.0; n_z];
    for &j in support {
        d[j] = alpha;
    }
    let plus = DenseMatrix::from_diagonal(&d);
    let minus = plus.sub(&dense_quad(problem, row));
    (plus, minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_spectrum() {
        assert_eq!(dense_symmetric_eigs(&DenseMatrix::identity(3)).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn diagonal_spectrum_is_sorted() {
        let eigs = dense_symmetric_eigs(&DenseMatrix::from_diagonal(&[-2.0, 5.0, 0.0])).unwrap();
        assert_eq!(eigs, vec![-2.0, 0.0, 5.0]);
    }

    #[test]
    fn swap_matrix_spectrum() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let eigs = dense_symmetric_eigs(&a).unwrap();
        assert!((eigs[0] + 1.0).abs() < 1e-14 && (eigs[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_symmetric_input_is_rejected() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(dense_symmetric_eigs(&a).is_err());
    }

    #[test]
    fn reconstruction_of_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 20, 60, 200] {
            let mut a = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.gen::<f64>() * 2.0 - 1.0;
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let (vals, q) = dense_symmetric_eigen(&a).unwrap();
            let rebuilt = q.matmul(&DenseMatrix::from_diagonal(&vals)).matmul(&q.transpose());
            assert!(rebuilt.sub(&a).frobenius_norm() <= 1e-10 * a.frobenius_norm(), "n = {n}");
        }
    }

    #[test]
    fn gradient_of_linear_function() {
        let c = [1.5, -2.0, 0.25];
        let g = finite_diff_gradient(|x| x.iter().zip(&c).map(|(a, b)| a * b).sum(), &[0.3, 0.1, -4.0], 1e-6);
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_of_squared_norm() {
        let x = [0.3, -1.2, 2.0];
        let g = finite_diff_gradient(|x| x.iter().map(|v| v * v).sum(), &x, 1e-5);
        for (a, b) in g.iter().zip(&x) {
            assert!((a - 2.0 * b).abs() < 1e-8);
        }
    }

    #[test]
    fn compressed_block_keeps_the_spectrum() {
        let mut a = DenseMatrix::zeros(5, 5);
        a[(1, 1)] = 2.0;
        a[(1, 3)] = 1.0;
        a[(3, 1)] = 1.0;
        assert_eq!(a.nonzero_indices(), vec![1, 3]);
        assert!((dense_spectral_radius(&a).unwrap() - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((dense_min_eig(&a).unwrap() - (1.0 - 2f64.sqrt())).abs() < 1e-12);
    }
}
