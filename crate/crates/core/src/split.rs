//! Sparse difference-of-convex splits `P = αD − (αD − P)`.
//!
//! `D` is the 0/1 diagonal on the row's support `J(P) ∪ J(p)` (z-block only),
//! so `P⁺ = αD` is diagonal with a single scalar per row and `P⁻ = αD − P`
//! keeps the sparsity of `P`. Both are PSD as soon as `α ≥ |λ|max(P)`.
//!
//! For the power Hessians the spectrum is available in closed form. The
//! symmetrized `Ĥ_{r,k}` is a permuted real form of a Hermitian arrowhead
//! matrix whose only nonzero diagonal entry is `a = Re Y_kk` and whose
//! off-diagonal weight is `R = Σ_{j≠k} |Y_kj|²`; its nonzero eigenvalues are
//! `(a ± sqrt(a² + R)) / 2`, each with multiplicity two. `Ĥ_{q,k}` is the
//! same with `a = −Im Y_kk`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::qclp::{ConstraintKind, PowerPart, QclpProblem, QuadraticConstraint};
use crate::sparse::SparseComplexMatrix;

/// Nonzero eigenvalues of a power Hessian and the spectral radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerEigs {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub magnitude: f64,
}

/// How `α` is chosen for power and cost rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum AlphaRule {
    /// Closed-form spectral radius of the power Hessian.
    #[default]
    Analytic,
    /// Largest absolute row sum (a Gershgorin bound); never below the
    /// spectral radius, usually looser.
    Gershgorin,
}

/// Closed-form eigenvalues of `Ĥ_{r,k}` (active) or `Ĥ_{q,k}` (reactive) in
/// `O(row length)`.
pub fn analytic_power_eigs(y: &SparseComplexMatrix, k: usize, part: PowerPart) -> PowerEigs {
    let mut diag = 0.0;
    let mut off = 0.0;
    for (j, ykj) in y.row(k) {
        if j == k {
            diag = match part {
                PowerPart::Active => ykj.re,
                PowerPart::Reactive => -ykj.im,
            };
        } else {
            off += ykj.norm_sqr();
        }
    }
    let root = (diag * diag + off).sqrt();
    let lambda_plus = 0.5 * (diag + root);
    let lambda_minus = 0.5 * (diag - root);
    PowerEigs { lambda_plus, lambda_minus, magnitude: lambda_plus.abs().max(lambda_minus.abs()) }
}

fn max_abs_row_sum(c: &QuadraticConstraint) -> f64 {
    let mut best = 0.0f64;
    let mut current = 0.0;
    let mut row = usize::MAX;
    for &(r, _, v) in c.quad.entries() {
        if r != row {
            best = best.max(current);
            current = 0.0;
            row = r;
        }
        current += v.abs();
    }
    best.max(current)
}

fn max_abs_entry(c: &QuadraticConstraint) -> f64 {
    c.quad.entries().iter().fold(0.0f64, |m, e| m.max(e.2.abs()))
}

/// The split magnitude `α` for one row.
///
/// Voltage rows are `±` a 0/1 diagonal (α = 1 for assembled rows); line rows
/// carry `w·[[1, −1], [−1, 1]]` on each of the real and imaginary blocks
/// (α = 2w); power and cost rows use the power Hessian of their bus.
pub fn constraint_alpha(c: &QuadraticConstraint, y: &SparseComplexMatrix, rule: AlphaRule) -> f64 {
    if c.quad.is_empty() {
        return 0.0;
    }
    match (c.kind, c.part) {
        (ConstraintKind::VoltUpper | ConstraintKind::VoltLower, _) => max_abs_entry(c),
        (ConstraintKind::Line, _) => 2.0 * max_abs_entry(c),
        (_, Some(part)) if rule == AlphaRule::Analytic => analytic_power_eigs(y, c.element, part).magnitude,
        _ => max_abs_row_sum(c),
    }
}

/// A row together with its split magnitude and support.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConstraint {
    pub base: QuadraticConstraint,
    pub alpha: f64,
    /// Sorted `J(P) ∪ J(p)` over the z-block.
    pub support: Vec<usize>,
}

impl SplitConstraint {
    /// `zᵀ P⁺ z = α ‖z_S‖²`.
    pub fn plus_quad(&self, z: &[f64]) -> f64 {
        self.alpha * self.support.iter().map(|&j| z[j] * z[j]).sum::<f64>()
    }

    /// `zᵀ P⁻ z = α ‖z_S‖² − zᵀ P z`.
    pub fn minus_quad(&self, z: &[f64]) -> f64 {
        self.plus_quad(z) - self.base.quad.quad_form(z)
    }

    /// Row value of the convexification at `x̃`:
    /// `g(x) + (z − x̃)ᵀ P⁻ (z − x̃)`.
    pub fn convexified_eval(&self, x: &[f64], x_tilde: &[f64]) -> f64 {
        let dz: Vec<f64> = x.iter().zip(x_tilde).map(|(a, b)| a - b).collect();
        self.convexified_eval_diff(x, &dz)
    }

    /// As [`Self::convexified_eval`] with `dz = x − x̃` precomputed (at
    /// least over the z-block); costs `O(nnz)` of the row.
    pub fn convexified_eval_diff(&self, x: &[f64], dz: &[f64]) -> f64 {
        self.base.eval(x) + self.minus_quad(dz)
    }
}

/// Lower bound on the spectral radius: `max_i ‖P e_i‖₂ ≤ |λ|max(P)`.
fn spectral_lower_bound(c: &QuadraticConstraint) -> f64 {
    let mut best = 0.0f64;
    let mut current = 0.0;
    let mut row = usize::MAX;
    for &(r, _, v) in c.quad.entries() {
        if r != row {
            best = best.max(current);
            current = 0.0;
            row = r;
        }
        current += v * v;
    }
    best.max(current).sqrt()
}

/// Splits `c` with magnitude `alpha`.
///
/// Fails with [`Error::Split`] if `alpha` is provably below the spectral
/// radius of `P` (checked against the largest column norm).
pub fn split(c: &QuadraticConstraint, alpha: f64, n_z: usize, row: usize) -> Result<SplitConstraint> {
    let bound = spectral_lower_bound(c);
    if !(alpha >= 0.0) || alpha < bound * (1.0 - 1e-12) {
        return Err(Error::Split { row, alpha, bound });
    }
    Ok(SplitConstraint { base: c.clone(), alpha, support: c.support(n_z) })
}

/// Splits every row of `problem`.
pub fn split_all(problem: &QclpProblem, y: &SparseComplexMatrix, rule: AlphaRule) -> Result<Vec<SplitConstraint>> {
    let n_z = problem.n_z();
    problem.constraints.iter().enumerate().map(|(i, c)| split(c, constraint_alpha(c, y, rule), n_z, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qclp::{sparse_vector, SymSparse};
    use num_complex::Complex64;

    fn row(kind: ConstraintKind, quad: SymSparse, lin: Vec<(usize, f64)>) -> QuadraticConstraint {
        QuadraticConstraint { kind, part: None, quad, lin, omega: 0.0, bound: 0.0, element: 0 }
    }

    #[test]
    fn empty_row_has_zero_spectrum() {
        let y = SparseComplexMatrix::from_triplets(2, vec![]);
        let e = analytic_power_eigs(&y, 0, PowerPart::Active);
        assert_eq!(e.magnitude, 0.0);
    }

    #[test]
    fn two_bus_spectral_radius() {
        let v = Complex64::new(1.0, 1.0);
        let y = SparseComplexMatrix::from_triplets(2, vec![(0, 0, -v), (0, 1, v), (1, 0, v), (1, 1, -v)]);
        let e = analytic_power_eigs(&y, 0, PowerPart::Active);
        assert!((e.magnitude - (1.0 + 3f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((e.lambda_plus - (3f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn voltage_lower_row_split() {
        let quad = SymSparse::symmetrized([(0, 0, -1.0), (2, 2, -1.0)]);
        let c = row(ConstraintKind::VoltLower, quad, sparse_vector([(0, -2.0), (2, 0.0)]));
        let y = SparseComplexMatrix::from_triplets(2, vec![]);
        let alpha = constraint_alpha(&c, &y, AlphaRule::Analytic);
        assert_eq!(alpha, 1.0);
        let s = split(&c, alpha, 4, 0).unwrap();
        let e0 = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(s.minus_quad(&e0), 2.0);
    }

    #[test]
    fn voltage_upper_row_has_zero_concave_part() {
        let quad = SymSparse::symmetrized([(1, 1, 1.0), (3, 3, 1.0)]);
        let c = row(ConstraintKind::VoltUpper, quad, vec![]);
        let s = split(&c, 1.0, 4, 0).unwrap();
        assert_eq!(s.minus_quad(&[0.3, -1.0, 2.0, 0.7]), 0.0);
    }

    #[test]
    fn line_row_alpha() {
        let w = 100.0;
        let quad = SymSparse::symmetrized([(0, 0, w), (1, 1, w), (0, 1, -w), (1, 0, -w)]);
        let c = row(ConstraintKind::Line, quad, vec![]);
        let y = SparseComplexMatrix::from_triplets(2, vec![]);
        assert_eq!(constraint_alpha(&c, &y, AlphaRule::Analytic), 200.0);
    }

    #[test]
    fn linear_only_row_gets_linear_support() {
        let c = row(ConstraintKind::PowerUpperP, SymSparse::default(), vec![(2, 1.0)]);
        let s = split(&c, 3.0, 4, 0).unwrap();
        assert_eq!(s.support, vec![2]);
        let z = [0.0, 0.0, 2.0, 0.0];
        assert_eq!(s.plus_quad(&z), 12.0);
        assert_eq!(s.minus_quad(&z), 12.0);
    }

    #[test]
    fn too_small_alpha_is_rejected() {
        let quad = SymSparse::symmetrized([(0, 0, 4.0)]);
        let c = row(ConstraintKind::Line, quad, vec![]);
        assert!(matches!(split(&c, 3.9, 2, 5), Err(Error::Split { row: 5, .. })));
    }
}
