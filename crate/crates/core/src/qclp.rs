//! Reformulation of the curtailment OPF as a quadratically constrained
//! linear program in `x = [z; u]`.
//!
//! `z = [Re Δv; Im Δv] ∈ R^{2M}` is the voltage change from the uncontrolled
//! state and `u ∈ R^{4M}` holds one nonnegative slack per cost row (two per
//! absolute value). Row layout:
//!
//! | rows                  | content                                              |
//! |-----------------------|------------------------------------------------------|
//! | `6k .. 6k+6`          | P upper/lower, Q upper/lower, V upper/lower at bus k  |
//! | `6M .. 6M+L`          | line current limits                                  |
//! | `6M+L+4k .. +4`       | `±Δp_k − u ≤ 0`, `±Δq_k − u ≤ 0`                     |
//!
//! Voltage and line rows are kept in squared-magnitude form.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::grid::{build_admittance, GridModel, OperatingPoint};
use crate::sparse::SparseComplexMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstraintKind {
    PowerUpperP,
    PowerLowerP,
    PowerUpperQ,
    PowerLowerQ,
    VoltUpper,
    VoltLower,
    Line,
    CostSlack,
}

/// Which power Hessian a power or cost row is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PowerPart {
    Active,
    Reactive,
}

/// Symmetric sparse matrix stored as sorted, unique `(row, col, value)`
/// triplets holding both triangles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymSparse {
    entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    /// `(A + Aᵀ)/2` for the matrix given by (possibly repeated) triplets.
    pub fn symmetrized(triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            *acc.entry((r, c)).or_default() += 0.5 * v;
            *acc.entry((c, r)).or_default() += 0.5 * v;
        }
        Self { entries: acc.into_iter().filter(|&(_, v)| v != 0.0).map(|((r, c), v)| (r, c, v)).collect() }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { entries: self.entries.iter().map(|&(r, c, v)| (r, c, factor * v)).collect() }
    }

    /// `zᵀ A z`.
    pub fn quad_form(&self, z: &[f64]) -> f64 {
        self.entries.iter().map(|&(r, c, v)| z[r] * v * z[c]).sum()
    }

    /// Adds `factor · A z` into `out`.
    pub fn add_mul_vec(&self, z: &[f64], factor: f64, out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[r] += factor * v * z[c];
        }
    }

    /// Indices of rows/columns holding at least one nonzero.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.entries.iter().map(|e| e.0).collect();
        idx.dedup();
        idx
    }

    /// Value at the diagonal position `i` (zero if absent).
    pub fn diag(&self, i: usize) -> f64 {
        self.entries.iter().find(|e| e.0 == i && e.1 == i).map_or(0.0, |e| e.2)
    }
}

/// `(index, value)` pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

/// Sorted, merged sparse vector with exact zeros removed.
pub fn sparse_vector(pairs: impl IntoIterator<Item = (usize, f64)>) -> SparseVec {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, v) in pairs {
        *acc.entry(i).or_default() += v;
    }
    acc.into_iter().filter(|&(_, v)| v != 0.0).collect()
}

fn sparse_dot(a: &[(usize, f64)], x: &[f64]) -> f64 {
    a.iter().map(|&(i, v)| v * x[i]).sum()
}

/// One row `xᵀ P x + pᵀ x + ω ≤ 0` of the QCLP.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub kind: ConstraintKind,
    /// Set for power and cost rows.
    pub part: Option<PowerPart>,
    /// Quadratic part over the `z` block.
    pub quad: SymSparse,
    /// Linear part over the full `x`; cost rows carry one `−1` on their slack.
    pub lin: Vec<(usize, f64)>,
    /// Constant; `−∞` marks a row whose bound is infinite (never active).
    pub omega: f64,
    /// The limit the row enforces, in natural units: a power bound, a
    /// voltage magnitude or a current magnitude (unsquared). Zero for cost rows.
    pub bound: f64,
    /// Originating bus (or line, for [`ConstraintKind::Line`]) index.
    pub element: usize,
}

impl QuadraticConstraint {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.quad.quad_form(x) + sparse_dot(&self.lin, x) + self.omega
    }

    /// Value with the slack entry (if any) dropped.
    pub fn eval_without_slack(&self, x: &[f64], n_z: usize) -> f64 {
        self.quad.quad_form(x) + self.lin.iter().filter(|e| e.0 < n_z).map(|&(i, v)| v * x[i]).sum::<f64>() + self.omega
    }

    /// Adds `factor · (2 P x + p)` into `grad`.
    pub fn add_gradient(&self, x: &[f64], factor: f64, grad: &mut [f64]) {
        self.quad.add_mul_vec(x, 2.0 * factor, grad);
        for &(i, v) in &self.lin {
            grad[i] += factor * v;
        }
    }

    /// Slack variable index for cost rows.
    pub fn slack_index(&self, n_z: usize) -> Option<usize> {
        self.lin.iter().find(|e| e.0 >= n_z).map(|e| e.0)
    }

    /// `J(P) ∪ J(p)` restricted to the `z` block.
    pub fn support(&self, n_z: usize) -> Vec<usize> {
        let mut idx = self.quad.support();
        idx.extend(self.lin.iter().filter(|e| e.0 < n_z).map(|e| e.0));
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    pub fn is_active_row(&self) -> bool {
        self.omega > f64::NEG_INFINITY
    }
}

/// The symmetrized power Hessians `(Ĥ_{r,k}, Ĥ_{q,k})` of bus `k`.
pub fn power_hessians(y: &SparseComplexMatrix, k: usize) -> (SymSparse, SymSparse) {
    let m = y.dim();
    let mut hr = Vec::new();
    let mut hq = Vec::new();
    for (j, ykj) in y.row(k) {
        let (g, b) = (ykj.re, ykj.im);
        hr.extend([(k, j, g), (k, m + j, -b), (m + k, j, b), (m + k, m + j, g)]);
        hq.extend([(k, j, -b), (k, m + j, -g), (m + k, j, g), (m + k, m + j, -b)]);
    }
    (SymSparse::symmetrized(hr), SymSparse::symmetrized(hq))
}

/// Linear parts `(h_{r,k}, h_{q,k})` of the power change at bus `k`, as
/// sparse vectors over the `z` block.
pub fn power_linear_parts(y: &SparseComplexMatrix, v0: &[Complex64], k: usize) -> (SparseVec, SparseVec) {
    let m = y.dim();
    let c = v0[k];
    let current: Complex64 = y.row(k).map(|(j, ykj)| ykj * v0[j]).sum();
    let mut hr = Vec::new();
    let mut hq = Vec::new();
    for (j, ykj) in y.row(k) {
        let (g, b) = (ykj.re, ykj.im);
        hr.push((j, c.re * g + c.im * b));
        hr.push((m + j, c.im * g - c.re * b));
        hq.push((j, c.im * g - c.re * b));
        hq.push((m + j, -c.im * b - c.re * g));
    }
    hr.extend([(k, current.re), (m + k, current.im)]);
    hq.extend([(k, -current.im), (m + k, current.re)]);
    (sparse_vector(hr), sparse_vector(hq))
}

/// `(Δp, Δq)` caused by the voltage change `z` around `v0`.
pub fn delta_power(z: &[f64], y: &SparseComplexMatrix, v0: &[Complex64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = y.dim();
    check_dim(m, v0.len())?;
    check_dim(2 * m, z.len())?;
    let mut dp = Vec::with_capacity(m);
    let mut dq = Vec::with_capacity(m);
    for k in 0..m {
        let (hr, hq) = power_hessians(y, k);
        let (lr, lq) = power_linear_parts(y, v0, k);
        dp.push(hr.quad_form(z) + sparse_dot(&lr, z));
        dq.push(hq.quad_form(z) + sparse_dot(&lq, z));
    }
    Ok((dp, dq))
}

/// The assembled QCLP `min cᵀx s.t. xᵀP_i x + p_iᵀx + ω_i ≤ 0, u ≥ 0`.
#[derive(Debug, Clone)]
pub struct QclpProblem {
    pub n_buses: usize,
    pub n_lines: usize,
    pub constraints: Vec<QuadraticConstraint>,
    /// The first `n_operational` rows are operational limits; the rest are
    /// cost rows.
    pub n_operational: usize,
}

impl QclpProblem {
    /// Wraps hand-built rows; checks that indices fit `x ∈ R^{6M}`.
    pub fn from_parts(
        n_buses: usize,
        n_lines: usize,
        constraints: Vec<QuadraticConstraint>,
        n_operational: usize,
    ) -> Result<Self> {
        let n_z = 2 * n_buses;
        let n_x = 6 * n_buses;
        if n_operational > constraints.len() {
            return Err(Error::Assembly("more operational rows than rows".into()));
        }
        for (i, c) in constraints.iter().enumerate() {
            let quad_ok = c.quad.entries().iter().all(|e| e.0 < n_z && e.1 < n_z);
            let lin_ok = c.lin.iter().all(|e| e.0 < n_x);
            if !quad_ok || !lin_ok {
                return Err(Error::Assembly(format!("row {i} indexes outside x")));
            }
            if c.lin.iter().filter(|e| e.0 >= n_z).count() > 1 {
                return Err(Error::Assembly(format!("row {i} touches more than one slack")));
            }
        }
        Ok(Self { n_buses, n_lines, constraints, n_operational })
    }

    pub fn n_z(&self) -> usize {
        2 * self.n_buses
    }

    pub fn n_x(&self) -> usize {
        6 * self.n_buses
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.len()
    }

    /// Starting point `x = 0`: the uncontrolled state with zero slacks.
    pub fn x0(&self) -> Vec<f64> {
        vec![0.0; self.n_x()]
    }

    pub fn is_operational(&self, row: usize) -> bool {
        row < self.n_operational
    }

    pub fn operational(&self) -> &[QuadraticConstraint] {
        &self.constraints[..self.n_operational]
    }

    /// `cᵀx`: the sum of the slack variables.
    pub fn objective(&self, x: &[f64]) -> f64 {
        x[self.n_z()..].iter().sum()
    }

    /// Row values `xᵀP_i x + p_iᵀx + ω_i` for all rows.
    pub fn eval_rows(&self, x: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.eval(x)).collect()
    }

    /// Replaces the slack block of `x` with the smallest slacks that satisfy
    /// the cost rows for the given `z`.
    pub fn with_exact_slacks(&self, x: &[f64]) -> Vec<f64> {
        let n_z = self.n_z();
        let mut out = x.to_vec();
        out[n_z..].iter_mut().for_each(|u| *u = 0.0);
        for c in &self.constraints[self.n_operational..] {
            if let Some(s) = c.slack_index(n_z) {
                out[s] = c.eval_without_slack(x, n_z).max(0.0);
            }
        }
        out
    }

    /// `‖Δp‖₁ + ‖Δq‖₁` at `z`, i.e. `min_u cᵀx` with `z` fixed.
    pub fn deviation_cost(&self, x: &[f64]) -> f64 {
        self.objective(&self.with_exact_slacks(x))
    }

    pub fn diagnostics(&self) -> QclpDiagnostics {
        QclpDiagnostics {
            n_buses: self.n_buses,
            n_lines: self.n_lines,
            n_rows: self.n_rows(),
            n_operational: self.n_operational,
            rows: self
                .constraints
                .iter()
                .map(|c| RowDiagnostics {
                    kind: c.kind,
                    element: c.element,
                    nnz_quad: c.quad.nnz(),
                    nnz_lin: c.lin.len(),
                    bounded: c.is_active_row(),
                })
                .collect(),
        }
    }
}

/// Debug dump of a [`QclpProblem`]; not a stable format.
#[derive(Debug, Serialize)]
pub struct QclpDiagnostics {
    pub n_buses: usize,
    pub n_lines: usize,
    pub n_rows: usize,
    pub n_operational: usize,
    pub rows: Vec<RowDiagnostics>,
}

#[derive(Debug, Serialize)]
pub struct RowDiagnostics {
    pub kind: ConstraintKind,
    pub element: usize,
    pub nnz_quad: usize,
    pub nnz_lin: usize,
    pub bounded: bool,
}

fn bound_gap(value: f64, bound: f64) -> f64 {
    // value − bound, with an infinite bound giving −∞
    if bound.is_infinite() {
        f64::NEG_INFINITY
    } else {
        value - bound
    }
}

fn negate_vec(v: &[(usize, f64)]) -> Vec<(usize, f64)> {
    v.iter().map(|&(i, x)| (i, -x)).collect()
}

/// Builds the QCLP for `grid` around the uncontrolled state `op0`.
pub fn assemble_qclp(grid: &GridModel, op0: &OperatingPoint) -> Result<QclpProblem> {
    let m = grid.n_buses();
    check_dim(m, op0.v.len())?;
    check_dim(m, op0.s.len())?;
    for bus in &grid.buses {
        if !(bus.v_min <= bus.v_max) || !(bus.p_min <= bus.p_max) || !(bus.q_min <= bus.q_max) {
            return Err(Error::Assembly(format!("bus {} has an empty bound interval", bus.id)));
        }
    }
    let y = build_admittance(grid);
    let mismatch = op0.kirchhoff_mismatch(&y)?;
    if mismatch > 1e-8 {
        return Err(Error::Assembly(format!("operating point violates the power flow equations by {mismatch:e}")));
    }

    let n_z = 2 * m;
    let mut operational = Vec::with_capacity(6 * m + grid.n_branches());
    let mut cost = Vec::with_capacity(4 * m);
    let v0 = &op0.v;

    for (k, bus) in grid.buses.iter().enumerate() {
        let (hr, hq) = power_hessians(&y, k);
        let (lr, lq) = power_linear_parts(&y, v0, k);
        let (p0, q0) = (op0.s[k].re, op0.s[k].im);
        let row = |kind, part, quad: &SymSparse, lin: &[(usize, f64)], omega, bound| QuadraticConstraint {
            kind,
            part: Some(part),
            quad: quad.clone(),
            lin: lin.to_vec(),
            omega,
            bound,
            element: k,
        };
        let (hr_neg, hq_neg) = (hr.scaled(-1.0), hq.scaled(-1.0));
        let (lr_neg, lq_neg) = (negate_vec(&lr), negate_vec(&lq));
        use ConstraintKind::*;
        use PowerPart::*;
        operational.push(row(PowerUpperP, Active, &hr, &lr, bound_gap(p0, bus.p_max), bus.p_max));
        operational.push(row(PowerLowerP, Active, &hr_neg, &lr_neg, bound_gap(-p0, -bus.p_min), bus.p_min));
        operational.push(row(PowerUpperQ, Reactive, &hq, &lq, bound_gap(q0, bus.q_max), bus.q_max));
        operational.push(row(PowerLowerQ, Reactive, &hq_neg, &lq_neg, bound_gap(-q0, -bus.q_min), bus.q_min));

        let (vr, vq) = (v0[k].re, v0[k].im);
        let v0_sq = v0[k].norm_sqr();
        let volt_quad = SymSparse::symmetrized([(k, k, 1.0), (m + k, m + k, 1.0)]);
        let volt_lin = sparse_vector([(k, 2.0 * vr), (m + k, 2.0 * vq)]);
        operational.push(QuadraticConstraint {
            kind: VoltUpper,
            part: None,
            quad: volt_quad.clone(),
            lin: volt_lin.clone(),
            omega: bound_gap(v0_sq, bus.v_max * bus.v_max),
            bound: bus.v_max,
            element: k,
        });
        operational.push(QuadraticConstraint {
            kind: VoltLower,
            part: None,
            quad: volt_quad.scaled(-1.0),
            lin: negate_vec(&volt_lin),
            omega: bus.v_min * bus.v_min - v0_sq,
            bound: bus.v_min,
            element: k,
        });

        let slack = n_z + 4 * k;
        let with_slack = |lin: &[(usize, f64)], s: usize| {
            let mut l = lin.to_vec();
            l.push((s, -1.0));
            l
        };
        for (offset, part, quad, lin) in [
            (0, Active, &hr, &lr),
            (1, Active, &hr_neg, &lr_neg),
            (2, Reactive, &hq, &lq),
            (3, Reactive, &hq_neg, &lq_neg),
        ] {
            cost.push(QuadraticConstraint {
                kind: CostSlack,
                part: Some(part),
                quad: quad.clone(),
                lin: with_slack(lin, slack + offset),
                omega: 0.0,
                bound: 0.0,
                element: k,
            });
        }
    }

    for (idx, br) in grid.branches.iter().enumerate() {
        let (j, l) = (br.from, br.to);
        let w = br.y().norm_sqr();
        let a = v0[j] - v0[l];
        let quad = SymSparse::symmetrized([
            (j, j, w),
            (l, l, w),
            (j, l, -w),
            (l, j, -w),
            (m + j, m + j, w),
            (m + l, m + l, w),
            (m + j, m + l, -w),
            (m + l, m + j, -w),
        ]);
        let lin = sparse_vector([
            (j, 2.0 * w * a.re),
            (l, -2.0 * w * a.re),
            (m + j, 2.0 * w * a.im),
            (m + l, -2.0 * w * a.im),
        ]);
        operational.push(QuadraticConstraint {
            kind: ConstraintKind::Line,
            part: None,
            quad,
            lin,
            omega: bound_gap(w * a.norm_sqr(), br.i_max * br.i_max),
            bound: br.i_max,
            element: idx,
        });
    }

    let n_operational = operational.len();
    operational.extend(cost);
    Ok(QclpProblem { n_buses: m, n_lines: grid.n_branches(), constraints: operational, n_operational })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus() -> GridModel {
        let z = c(1.0, 1.0).inv();
        GridModel::new(
            1.0,
            vec![Bus::slack(1, 0.9, 1.1), Bus::fixed(2, c(0.0, 0.0), 0.9, 1.1)],
            vec![Branch::new(0, 1, z.re, z.im, 5.0)],
        )
        .unwrap()
    }

    #[test]
    fn empty_row_gives_zero_hessians() {
        let y = SparseComplexMatrix::from_triplets(3, vec![]);
        let (hr, hq) = power_hessians(&y, 1);
        assert!(hr.is_empty() && hq.is_empty());
    }

    #[test]
    fn symmetrization_preserves_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<_> = (0..12).map(|_| (rng.gen_range(0..6), rng.gen_range(0..6), rng.gen::<f64>() - 0.5)).collect();
        let sym = SymSparse::symmetrized(raw.clone());
        for _ in 0..100 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() - 0.5).collect();
            let direct: f64 = raw.iter().map(|&(r, c, v)| z[r] * v * z[c]).sum();
            assert!((direct - sym.quad_form(&z)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_voltage_gives_zero_linear_parts() {
        let y = build_admittance(&two_bus());
        let (hr, hq) = power_linear_parts(&y, &[c(0.0, 0.0); 2], 0);
        assert!(hr.is_empty() && hq.is_empty());
    }

    #[test]
    fn zero_change_gives_zero_delta() {
        let y = build_admittance(&two_bus());
        let (dp, dq) = delta_power(&[0.0; 4], &y, &[c(1.0, 0.1), c(0.9, 0.0)]).unwrap();
        assert!(dp.iter().chain(&dq).all(|&x| x == 0.0));
        assert!(delta_power(&[0.0; 3], &y, &[c(1.0, 0.0); 2]).is_err());
    }

    #[test]
    fn row_count_and_voltage_lower_constant() {
        let grid = two_bus();
        let y = build_admittance(&grid);
        let op = OperatingPoint::from_voltages(&y, vec![c(1.02, 0.0), c(0.97, -0.05)]).unwrap();
        let q = assemble_qclp(&grid, &op).unwrap();
        assert_eq!(q.n_rows(), 10 * 2 + 1);
        assert_eq!(q.n_operational, 6 * 2 + 1);
        let vl = &q.constraints[6 + 5];
        assert_eq!(vl.kind, ConstraintKind::VoltLower);
        let want = 0.9f64.powi(2) - op.v[1].norm_sqr();
        assert!((vl.eval(&q.x0()) - want).abs() < 1e-15);
    }

    #[test]
    fn unbounded_grid_is_feasible_at_start() {
        let mut grid = two_bus();
        for b in &mut grid.buses {
            *b = Bus { v_min: 0.0, v_max: f64::INFINITY, ..Bus::slack(b.id, 0.0, 0.0) };
            b.is_slack = false;
        }
        grid.buses[0].is_slack = true;
        grid.branches[0].i_max = f64::INFINITY;
        let y = build_admittance(&grid);
        let op = OperatingPoint::from_voltages(&y, vec![c(1.0, 0.0), c(0.95, 0.1)]).unwrap();
        let q = assemble_qclp(&grid, &op).unwrap();
        let x0 = q.x0();
        assert!(q.operational().iter().all(|r| r.eval(&x0) <= 0.0));
    }

    #[test]
    fn inconsistent_operating_point_is_rejected() {
        let grid = two_bus();
        let op = OperatingPoint { v: vec![c(1.0, 0.0); 2], s: vec![c(0.5, 0.0); 2] };
        assert!(matches!(assemble_qclp(&grid, &op), Err(Error::Assembly(_))));
    }

    #[test]
    fn empty_voltage_band_is_rejected() {
        let mut grid = two_bus();
        grid.buses[1].v_min = 1.2;
        let y = build_admittance(&grid);
        let op = OperatingPoint::from_voltages(&y, vec![c(1.0, 0.0); 2]).unwrap();
        assert!(matches!(assemble_qclp(&grid, &op), Err(Error::Assembly(_))));
    }

    #[test]
    fn exact_slacks_reproduce_one_norm() {
        let grid = two_bus();
        let y = build_admittance(&grid);
        let v0 = vec![c(1.0, 0.0), c(0.98, -0.02)];
        let op = OperatingPoint::from_voltages(&y, v0.clone()).unwrap();
        let q = assemble_qclp(&grid, &op).unwrap();
        let mut x = q.x0();
        x[..4].copy_from_slice(&[0.01, -0.02, 0.005, 0.03]);
        let (dp, dq) = delta_power(&x[..4], &y, &v0).unwrap();
        let want: f64 = dp.iter().chain(&dq).map(|d| d.abs()).sum();
        assert!((q.deviation_cost(&x) - want).abs() < 1e-14);
    }
}
