//! Feasible reference states for bundled and user cases.
//!
//! The case's own power flow is used when it respects every limit. Otherwise
//! the generator setpoints are redispatched: active power and voltage
//! magnitude at PV buses and the slack voltage magnitude are adjusted by a
//! bounded Levenberg–Marquardt iteration on the hinge residuals
//! `max(0, excess + margin)`, each evaluation being a full power flow.

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{build_admittance, GridModel, OperatingPoint};
use crate::matpower::{BusKind, MatpowerCase};
use crate::powerflow::{case_operating_point, solve_power_flow, PowerFlowSpec};
use crate::sparse::SparseComplexMatrix;

/// Violations below this are treated as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Interior margin targeted by the redispatch (p.u.).
pub const REDISPATCH_MARGIN: f64 = 1e-3;

/// The case's power flow, redispatched if it violates any limit.
pub fn reference_point(case: &MatpowerCase) -> Result<OperatingPoint> {
    let op = case_operating_point(case)?;
    if op.max_violation(&case.grid) <= FEASIBILITY_TOL {
        return Ok(op);
    }
    redispatch(case, REDISPATCH_MARGIN, 100)
}

#[derive(Debug, Clone, Copy)]
enum Setpoint {
    Active(usize),
    Magnitude(usize),
}

#[derive(Debug, Clone, Copy)]
struct Param {
    what: Setpoint,
    lo: f64,
    hi: f64,
}

struct Redispatch<'a> {
    grid: &'a GridModel,
    y: SparseComplexMatrix,
    base: PowerFlowSpec,
    params: Vec<Param>,
    margin: f64,
}

impl Redispatch<'_> {
    fn spec(&self, theta: &[f64]) -> PowerFlowSpec {
        let mut spec = self.base.clone();
        for (p, &t) in self.params.iter().zip(theta) {
            match p.what {
                Setpoint::Active(k) => spec.s_set[k].re = t,
                Setpoint::Magnitude(k) => {
                    let v = spec.v_set[k];
                    spec.v_set[k] = Complex64::from_polar(t, v.arg());
                }
            }
        }
        spec
    }

    fn eval(&self, theta: &[f64]) -> Option<(OperatingPoint, DVector<f64>)> {
        let v = solve_power_flow(&self.y, &self.spec(theta), 1e-11, 30).ok()?;
        let op = OperatingPoint::from_voltages(&self.y, v).ok()?;
        let r: Vec<f64> = op.limit_excess(self.grid).into_iter().map(|e| (e + self.margin).max(0.0)).collect();
        Some((op, DVector::from_vec(r)))
    }
}

/// Searches generator setpoints for a power-flow state that satisfies every
/// limit with `margin` to spare.
pub fn redispatch(case: &MatpowerCase, margin: f64, max_iter: usize) -> Result<OperatingPoint> {
    let grid = &case.grid;
    let sp = &case.setpoints;
    let mut params = Vec::new();
    let mut theta = Vec::new();
    for (k, bus) in grid.buses.iter().enumerate() {
        match sp.kind[k] {
            BusKind::Pv => {
                if bus.p_max > bus.p_min {
                    params.push(Param { what: Setpoint::Active(k), lo: bus.p_min, hi: bus.p_max });
                    theta.push(sp.s[k].re.clamp(bus.p_min, bus.p_max));
                }
                params.push(Param { what: Setpoint::Magnitude(k), lo: bus.v_min, hi: bus.v_max });
                theta.push(sp.v_mag[k].clamp(bus.v_min, bus.v_max));
            }
            BusKind::Slack => {
                params.push(Param { what: Setpoint::Magnitude(k), lo: bus.v_min, hi: bus.v_max });
                theta.push(sp.v_mag[k].clamp(bus.v_min, bus.v_max));
            }
            BusKind::Pq => {}
        }
    }
    let problem = Redispatch { grid, y: build_admittance(grid), base: PowerFlowSpec::from_case(case), params, margin };
    let fail = |msg: String| Error::Solver(format!("redispatch of {}: {msg}", case.name));
    let (mut op, mut r) =
        problem.eval(&theta).ok_or_else(|| fail("power flow diverged at the case setpoints".into()))?;
    let mut mu = 1e-3;
    for iter in 0..max_iter {
        let cost = r.norm_squared();
        debug!("redispatch iter {iter}: residual {cost:e}, violation {:e}", op.max_violation(grid));
        if cost == 0.0 {
            return Ok(op);
        }
        let h = 1e-6;
        let mut jac = DMatrix::zeros(r.len(), theta.len());
        for (j, p) in problem.params.iter().enumerate() {
            let step = if theta[j] + h <= p.hi { h } else { -h };
            let mut t = theta.clone();
            t[j] += step;
            let (_, rj) = problem.eval(&t).ok_or_else(|| fail("power flow diverged while differencing".into()))?;
            jac.set_column(j, &((rj - &r) / step));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut accepted = false;
        while mu < 1e12 {
            let mut lhs = jtj.clone();
            for i in 0..theta.len() {
                lhs[(i, i)] += mu * (jtj[(i, i)] + 1e-9);
            }
            let Some(delta) = lhs.lu().solve(&(-&g)) else {
                mu *= 4.0;
                continue;
            };
            let trial: Vec<f64> = theta
                .iter()
                .zip(problem.params.iter())
                .zip(delta.iter())
                .map(|((t, p), d)| (t + d).clamp(p.lo, p.hi))
                .collect();
            match problem.eval(&trial) {
                Some((op_t, r_t)) if r_t.norm_squared() < cost => {
                    theta = trial;
                    op = op_t;
                    r = r_t;
                    mu = (mu / 3.0).max(1e-9);
                    accepted = true;
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if !accepted {
            break;
        }
    }
    if op.max_violation(grid) <= FEASIBILITY_TOL {
        return Ok(op);
    }
    Err(fail(format!("no feasible setpoints found (violation {:e})", op.max_violation(grid))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn feasible_case_is_returned_unchanged() {
        let case = cases::load("case9").unwrap();
        let pf = case_operating_point(&case).unwrap();
        assert_eq!(reference_point(&case).unwrap(), pf);
    }

    #[test]
    fn case30_reference_is_feasible_and_consistent() {
        let case = cases::load("case30").unwrap();
        let op = reference_point(&case).unwrap();
        assert!(op.max_violation(&case.grid) <= FEASIBILITY_TOL);
        let y = build_admittance(&case.grid);
        assert!(op.kirchhoff_mismatch(&y).unwrap() < 1e-9);
    }
}
