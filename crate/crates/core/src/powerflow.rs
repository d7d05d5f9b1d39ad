//! Newton–Raphson power flow in rectangular coordinates.
//!
//! Used to produce Kirchhoff-consistent reference states (solved case
//! operating points, simulation steps). The Jacobian is dense, which is fine
//! for the grid sizes where a reference state is needed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::grid::{power_injections, GridModel, OperatingPoint};
use crate::matpower::{BusKind, MatpowerCase};
use crate::sparse::SparseComplexMatrix;

/// Targets for one power-flow solve.
#[derive(Debug, Clone)]
pub struct PowerFlowSpec {
    pub kind: Vec<BusKind>,
    /// Slack voltage (complex) and PV magnitude targets (`|v_set|`); also the
    /// initial guess for every bus.
    pub v_set: Vec<Complex64>,
    /// Net withdrawal targets for PQ buses (P only at PV buses).
    pub s_set: Vec<Complex64>,
}

impl PowerFlowSpec {
    pub fn from_case(case: &MatpowerCase) -> Self {
        let sp = &case.setpoints;
        Self {
            kind: sp.kind.clone(),
            v_set: sp.v_mag.iter().zip(&sp.v_ang).map(|(&m, &a)| Complex64::from_polar(m, a)).collect(),
            s_set: sp.s.clone(),
        }
    }
}

pub fn solve_power_flow(
    y: &SparseComplexMatrix,
    spec: &PowerFlowSpec,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<Complex64>> {
    let m = y.dim();
    check_dim(m, spec.kind.len())?;
    check_dim(m, spec.v_set.len())?;
    check_dim(m, spec.s_set.len())?;
    let unknown: Vec<usize> = (0..m).filter(|&k| spec.kind[k] != BusKind::Slack).collect();
    let mut col_of = vec![usize::MAX; m];
    for (n, &k) in unknown.iter().enumerate() {
        col_of[k] = n;
    }
    let n = 2 * unknown.len();
    let mut v = spec.v_set.clone();

    let mut mismatch = f64::INFINITY;
    for iter in 0..=max_iter {
        let current = y.mul_vec(&v)?;
        let s = power_injections(y, &v)?;
        let mut f = DVector::zeros(n);
        for (row, &k) in unknown.iter().enumerate() {
            f[2 * row] = s[k].re - spec.s_set[k].re;
            f[2 * row + 1] = match spec.kind[k] {
                BusKind::Pv => v[k].norm_sqr() - spec.v_set[k].norm_sqr(),
                _ => s[k].im - spec.s_set[k].im,
            };
        }
        mismatch = f.amax();
        if mismatch <= tol {
            return Ok(v);
        }
        if iter == max_iter || !mismatch.is_finite() {
            break;
        }

        // ds_i/de_j = [i=j] conj(I_i) + v_i conj(Y_ij)
        // ds_i/df_j = [i=j] j conj(I_i) − j v_i conj(Y_ij)
        let mut jac = DMatrix::zeros(n, n);
        let j_unit = Complex64::new(0.0, 1.0);
        for (row, &i) in unknown.iter().enumerate() {
            let pv = spec.kind[i] == BusKind::Pv;
            for (j, yij) in y.row(i) {
                let col = col_of[j];
                if col == usize::MAX {
                    continue;
                }
                let mut de = v[i] * yij.conj();
                let mut df = -j_unit * v[i] * yij.conj();
                if i == j {
                    de += current[i].conj();
                    df += j_unit * current[i].conj();
                }
                jac[(2 * row, 2 * col)] += de.re;
                jac[(2 * row, 2 * col + 1)] += df.re;
                if !pv {
                    jac[(2 * row + 1, 2 * col)] += de.im;
                    jac[(2 * row + 1, 2 * col + 1)] += df.im;
                }
            }
            if pv {
                jac[(2 * row + 1, 2 * row)] = 2.0 * v[i].re;
                jac[(2 * row + 1, 2 * row + 1)] = 2.0 * v[i].im;
            }
        }
        let step = jac.lu().solve(&f).ok_or_else(|| Error::Solver("singular power-flow Jacobian".into()))?;
        for (col, &k) in unknown.iter().enumerate() {
            v[k] -= Complex64::new(step[2 * col], step[2 * col + 1]);
        }
    }
    Err(Error::PowerFlow { iterations: max_iter, mismatch })
}

/// Solves the case's own power flow and returns the resulting state.
pub fn case_operating_point(case: &MatpowerCase) -> Result<OperatingPoint> {
    let y = crate::grid::build_admittance(&case.grid);
    let v = solve_power_flow(&y, &PowerFlowSpec::from_case(case), 1e-11, 30)?;
    OperatingPoint::from_voltages(&y, v)
}

/// Power flow for a grid without setpoints: the slack bus is held at
/// `slack_voltage`, every other bus is PQ at the midpoint of its finite
/// power interval (or zero).
pub fn default_operating_point(grid: &GridModel, slack_voltage: Complex64) -> Result<OperatingPoint> {
    let y = crate::grid::build_admittance(grid);
    let mid = |lo: f64, hi: f64| match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo.max(0.0),
        (false, true) => hi.min(0.0),
        (false, false) => 0.0,
    };
    let spec = PowerFlowSpec {
        kind: grid.buses.iter().map(|b| if b.is_slack { BusKind::Slack } else { BusKind::Pq }).collect(),
        v_set: grid
            .buses
            .iter()
            .map(|b| if b.is_slack { slack_voltage } else { Complex64::new(slack_voltage.norm(), 0.0) })
            .collect(),
        s_set: grid.buses.iter().map(|b| Complex64::new(mid(b.p_min, b.p_max), mid(b.q_min, b.q_max))).collect(),
    };
    let v = solve_power_flow(&y, &spec, 1e-11, 30)?;
    OperatingPoint::from_voltages(&y, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn case9_power_flow_meets_setpoints() {
        let case = cases::load("case9").unwrap();
        let op = case_operating_point(&case).unwrap();
        for k in 0..9 {
            match case.setpoints.kind[k] {
                BusKind::Pq => assert!((op.s[k] - case.setpoints.s[k]).norm() < 1e-9),
                BusKind::Pv => {
                    assert!((op.s[k].re - case.setpoints.s[k].re).abs() < 1e-9);
                    assert!((op.v[k].norm() - case.setpoints.v_mag[k]).abs() < 1e-9);
                }
                BusKind::Slack => assert!((op.v[k] - Complex64::new(1.04, 0.0)).norm() < 1e-12),
            }
        }
    }

    #[test]
    fn case30_matches_independent_solver() {
        // Reference values from PYPOWER's runpf on the same case (textbook
        // admittance convention, polar Newton), tolerance 1e-12.
        let op = case_operating_point(&cases::load("case30").unwrap()).unwrap();
        for (bus, vm, va_deg) in [(8, 0.960624, -2.725769), (19, 0.965287, -3.958205), (13, 1.0, 1.476163)] {
            let v = op.v[bus - 1];
            assert!((v.norm() - vm).abs() < 2e-6, "bus {bus}");
            assert!((v.arg().to_degrees() - va_deg).abs() < 2e-6, "bus {bus}");
        }
        // Slack generation 25.9738 MW is a withdrawal of −0.259738 p.u.
        assert!((op.s[0].re + 0.259738).abs() < 1e-6);
    }
}
