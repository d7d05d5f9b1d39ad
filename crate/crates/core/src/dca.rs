//! Penalty DCA outer loop.
//!
//! Each outer iteration convexifies every row at the current point, solves
//! the lifted dual, and recovers the next point. The penalty `β` follows
//!
//! ```text
//! r = min(1 / ‖x⁺ − x‖, ‖λ‖₁ + δ₁);   β ← β + δ₂  if β < r
//! ```
//!
//! with `λ` the operational multipliers of the subproblem (`β` times the box
//! multipliers). Iteration stops when both the step and the subproblem
//! slack are below tolerance.
//!
//! With a capped inner solver the recovered primal can be worse than the
//! current point for the subproblem itself. The step towards it is then
//! halved until the convexified merit decreases (or dropped), which keeps
//! the true ℓ1 merit monotone. An exactly solved subproblem always passes
//! at the full step. When no step is taken, the current point still counts
//! as stationary if the dual value certifies it solves the subproblem.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::inner::{linearize, solve_inner_with, InnerOptions, COLD_START, DEFAULT_EPS};
use crate::qclp::{ConstraintKind, QclpProblem};
use crate::split::SplitConstraint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcaParams {
    pub beta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub eps_x: f64,
    pub eps_t: f64,
    pub max_outer: usize,
    /// Inner iteration cap per solve; `None` picks 100 for grids with up to
    /// 300 buses and 1000 otherwise.
    pub inner_iters: Option<usize>,
    pub inner_tol: f64,
    /// Denominator regularization of the lifted dual.
    pub eps: f64,
    /// Start each inner solve from the previous multipliers (and step size)
    /// instead of from zero.
    pub warm_inner: bool,
}

impl Default for DcaParams {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            delta1: 1.0,
            delta2: 1.0,
            eps_x: 1e-4,
            eps_t: 1e-4,
            max_outer: 200,
            inner_iters: None,
            inner_tol: 1e-8,
            eps: DEFAULT_EPS,
            warm_inner: true,
        }
    }
}

impl DcaParams {
    pub fn inner_cap(&self, n_buses: usize) -> usize {
        self.inner_iters.unwrap_or(if n_buses <= 300 { 100 } else { 1000 })
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.beta0, self.delta1, self.delta2, self.eps_x, self.eps_t, self.eps];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.max_outer == 0 {
            return Err(Error::Solver("DCA parameters must be positive and finite".into()));
        }
        if self.inner_iters == Some(0) {
            return Err(Error::Solver("inner iteration cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DcaStatus {
    Converged,
    IterLimit,
    InnerFailure,
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterRecord {
    pub k: usize,
    /// `‖Δp‖₁ + ‖Δq‖₁` at the new point.
    pub objective: f64,
    /// Largest convexified row value at the accepted point, in row units
    /// (the subproblem slack when the full step is taken).
    pub t_inner: f64,
    /// Largest violation of the original rows at the new point (p.u.).
    pub t_actual: f64,
    pub dx_norm: f64,
    /// Penalty used in this iteration.
    pub beta: f64,
    pub inner_iters: usize,
    /// Subproblem value estimate `−φ(λ)`.
    pub inner_value: f64,
    /// `−φ(λ) / β`.
    pub inner_value_per_beta: f64,
    /// `‖λ‖₁` of the operational multipliers.
    pub lambda_l1: f64,
    /// Fraction of the step towards the subproblem solution that was taken;
    /// below one only when an inexact inner solve failed to decrease the
    /// convexified merit.
    pub step_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DcaResult {
    /// Final point with slacks set to `|Δp|`, `|Δq|`.
    pub x_final: Vec<f64>,
    pub objective: f64,
    /// Largest violation of the original rows at `x_final` (p.u.).
    pub max_violation: f64,
    pub outer_iters: usize,
    pub history: Vec<OuterRecord>,
    pub status: DcaStatus,
    /// Multipliers of all QCLP rows from the last inner solve: `β·λ` on
    /// operational rows, `λ` on cost rows.
    pub multipliers: Vec<f64>,
    /// Box multipliers of the last inner solve, indexed by QCLP row (for
    /// warm starts).
    pub box_lambda: Vec<f64>,
    pub total_inner_iters: usize,
    pub final_beta: f64,
    /// Message of the inner failure, if any.
    pub failure: Option<String>,
}

/// Warm-start state carried between related solves.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub box_lambda: Option<Vec<f64>>,
    pub beta: Option<f64>,
}

/// Largest violation of the operational rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    /// `max_i max(0, g_i(x))` in row units (squared magnitudes for voltage
    /// and line rows).
    pub squared: f64,
    /// The same converted to p.u. magnitudes.
    pub magnitude: f64,
    /// Row attaining `magnitude`.
    pub row: Option<usize>,
}

fn magnitude_excess(kind: ConstraintKind, bound: f64, value: f64) -> f64 {
    match kind {
        ConstraintKind::VoltUpper | ConstraintKind::Line => (bound * bound + value).sqrt() - bound,
        ConstraintKind::VoltLower => bound - (bound * bound - value).max(0.0).sqrt(),
        _ => value,
    }
}

pub fn true_violation(problem: &QclpProblem, x: &[f64]) -> Violation {
    let mut out = Violation { squared: 0.0, magnitude: 0.0, row: None };
    for (i, c) in problem.operational().iter().enumerate() {
        if !c.is_active_row() {
            continue;
        }
        let g = c.eval(x);
        if g > 0.0 {
            out.squared = out.squared.max(g);
            let m = magnitude_excess(c.kind, c.bound, g);
            if m > out.magnitude {
                out.magnitude = m;
                out.row = Some(i);
            }
        }
    }
    out
}

/// First-order optimality residuals of the QCLP at `(x, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
    /// Multiplier scaling `s_d = max(100, ‖λ‖₁ / m) / 100`.
    pub scale: f64,
}

impl KktResidual {
    pub fn stationarity_scaled(&self) -> f64 {
        self.stationarity / self.scale
    }

    pub fn complementarity_scaled(&self) -> f64 {
        self.complementarity / self.scale
    }
}

/// Residuals of `c + Σ λ_i ∇g_i(x)` (projected on `u ≥ 0`),
/// `max |λ_i g_i(x)|` and the true violation; `multipliers` has one entry
/// per QCLP row.
pub fn kkt_residual(problem: &QclpProblem, x: &[f64], multipliers: &[f64]) -> Result<KktResidual> {
    check_dim(problem.n_x(), x.len())?;
    check_dim(problem.n_rows(), multipliers.len())?;
    if multipliers.iter().any(|&l| l < 0.0) {
        return Err(Error::Solver("multipliers must be nonnegative".into()));
    }
    let n_z = problem.n_z();
    let mut grad = vec![0.0; problem.n_x()];
    grad[n_z..].iter_mut().for_each(|g| *g = 1.0);
    let mut complementarity = 0.0f64;
    for (c, &l) in problem.constraints.iter().zip(multipliers) {
        if l == 0.0 || !c.is_active_row() {
            continue;
        }
        c.add_gradient(x, l, &mut grad);
        complementarity = complementarity.max((l * c.eval(x)).abs());
    }
    let mut stationarity = 0.0f64;
    for (i, g) in grad.iter().enumerate() {
        let r = if i < n_z || x[i] > 0.0 { g.abs() } else { (-g).max(0.0) };
        stationarity = stationarity.max(r);
    }
    let m = multipliers.len().max(1) as f64;
    let scale = (multipliers.iter().sum::<f64>() / m).max(100.0) / 100.0;
    Ok(KktResidual { stationarity, complementarity, feasibility: true_violation(problem, x).magnitude, scale })
}

/// `cᵀx + β Σ_i max(0, ĝ_i(x; x̃))` over the operational rows, with the cost
/// slacks at their smallest convexified-feasible values. This is the
/// subproblem objective; it majorizes the true ℓ1 merit and equals it at
/// `x = x̃`.
pub fn convexified_merit(
    problem: &QclpProblem,
    splits: &[SplitConstraint],
    x: &[f64],
    x_tilde: &[f64],
    beta: f64,
) -> f64 {
    convexified_merit_parts(problem, splits, x, x_tilde, beta).0
}

/// The merit and the largest operational row value `max(0, max_i ĝ_i)`.
fn convexified_merit_parts(
    problem: &QclpProblem,
    splits: &[SplitConstraint],
    x: &[f64],
    x_tilde: &[f64],
    beta: f64,
) -> (f64, f64) {
    let n_z = problem.n_z();
    let mut xz = x.to_vec();
    xz[n_z..].iter_mut().for_each(|u| *u = 0.0);
    let dz: Vec<f64> = xz.iter().zip(x_tilde).map(|(a, b)| a - b).collect();
    let mut t = 0.0;
    let mut t_max = 0.0f64;
    let mut cost = 0.0;
    for (i, sp) in splits.iter().enumerate() {
        if !sp.base.is_active_row() {
            continue;
        }
        let g = sp.convexified_eval_diff(&xz, &dz[..n_z]);
        if problem.is_operational(i) {
            t += g.max(0.0);
            t_max = t_max.max(g);
        } else {
            cost += g.max(0.0);
        }
    }
    (cost + beta * t, t_max)
}

/// Largest `τ ∈ {1, ½, ¼, …}` (down to `2⁻¹²`) with
/// `merit(x̃ + τ(x⁺ − x̃)) < merit(x̃)`, the resulting point and its row
/// max; `τ = 0` keeps `x̃`. Also returns `merit(x̃)`.
fn safeguarded_step(
    problem: &QclpProblem,
    splits: &[SplitConstraint],
    x_tilde: &[f64],
    x_plus: &[f64],
    beta: f64,
) -> (f64, Vec<f64>, f64, f64) {
    let (merit0, t0) = convexified_merit_parts(problem, splits, x_tilde, x_tilde, beta);
    let mut tau = 1.0;
    while tau >= 1.0 / 4096.0 {
        let trial: Vec<f64> = x_tilde.iter().zip(x_plus).map(|(a, b)| a + tau * (b - a)).collect();
        let (merit, t) = convexified_merit_parts(problem, splits, &trial, x_tilde, beta);
        if merit < merit0 || (merit - merit0).abs() <= 1e-14 * merit0.abs().max(1.0) && tau == 1.0 {
            return (tau, trial, t, merit0);
        }
        tau *= 0.5;
    }
    (0.0, x_tilde.to_vec(), t0, merit0)
}

fn norm2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs the DCA from `x0` with cold multipliers.
pub fn dca_solve(
    problem: &QclpProblem,
    splits: &[SplitConstraint],
    params: &DcaParams,
    x0: &[f64],
) -> Result<DcaResult> {
    dca_solve_warm(problem, splits, params, x0, &WarmStart::default())
}

/// Runs the DCA from `x0`, seeding the first inner solve from `warm`.
pub fn dca_solve_warm(
    problem: &QclpProblem,
    splits: &[SplitConstraint],
    params: &DcaParams,
    x0: &[f64],
    warm: &WarmStart,
) -> Result<DcaResult> {
    params.validate()?;
    check_dim(problem.n_x(), x0.len())?;
    check_dim(problem.n_rows(), splits.len())?;
    let n_rows = problem.n_rows();
    let cap = params.inner_cap(problem.n_buses);

    let mut x = x0.to_vec();
    let mut beta = warm.beta.unwrap_or(params.beta0);
    let mut box_lambda = match &warm.box_lambda {
        Some(l) => {
            check_dim(n_rows, l.len())?;
            l.clone()
        }
        None => vec![COLD_START; n_rows],
    };
    let mut multipliers = vec![0.0; n_rows];
    let mut step = 1.0;
    let mut history = Vec::new();
    let mut total_inner = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut status = DcaStatus::IterLimit;
    let mut failure = None;

    for k in 0..params.max_outer {
        let lp = linearize(problem, splits, &x, beta, params.eps)?;
        let init = if params.warm_inner || k == 0 { lp.gather(&box_lambda) } else { vec![COLD_START; lp.n_rows()] };
        let opts = InnerOptions {
            max_iters: cap,
            tol: params.inner_tol,
            initial_step: if params.warm_inner { step } else { 1.0 },
            ..InnerOptions::default()
        };
        let sol = match solve_inner_with(&lp, &init, &opts) {
            Ok(s) => s,
            Err(e) => {
                status = DcaStatus::InnerFailure;
                failure = Some(e.to_string());
                break;
            }
        };
        total_inner += sol.iterations;
        step = sol.final_step;

        let (tau, x_new, t_inner, merit0) = safeguarded_step(problem, splits, &x, &sol.x, beta);
        // −φ bounds the subproblem from below, so a small gap certifies that
        // x̃ already solves it even when no step was accepted.
        let certified = merit0 + sol.dual_value <= params.eps_t * merit0.abs().max(1.0);
        let dx = norm2_diff(&x_new, &x);
        let violation = true_violation(problem, &x_new);
        let objective = problem.deviation_cost(&x_new);
        if !objective.is_finite() || !violation.magnitude.is_finite() {
            return Err(Error::Solver(format!("non-finite iterate at outer iteration {k}")));
        }
        box_lambda = lp.scatter(&sol.lambda, n_rows);
        multipliers =
            box_lambda.iter().enumerate().map(|(i, &l)| if problem.is_operational(i) { beta * l } else { l }).collect();
        let lambda_l1: f64 = multipliers[..problem.n_operational].iter().sum();

        history.push(OuterRecord {
            k,
            objective,
            t_inner,
            t_actual: violation.magnitude,
            dx_norm: dx,
            beta,
            inner_iters: sol.iterations,
            inner_value: -sol.dual_value,
            inner_value_per_beta: -sol.dual_value / beta,
            lambda_l1,
            step_fraction: tau,
        });
        log::debug!(
            "dca k={k} obj={objective:.6e} t_inner={t_inner:.3e} t_actual={:.3e} dx={dx:.3e} beta={beta} inner={}",
            violation.magnitude,
            sol.iterations
        );

        if best.as_ref().is_none_or(|(v, _)| violation.magnitude <= *v) {
            best = Some((violation.magnitude, x_new.clone()));
        }
        x = x_new;
        let stationary = if tau > 0.0 { dx <= params.eps_x } else { certified };
        if stationary && t_inner <= params.eps_t {
            status = DcaStatus::Converged;
            break;
        }
        let r = (1.0 / dx).min(lambda_l1 + params.delta1);
        if beta < r {
            beta += params.delta2;
        }
    }

    if status != DcaStatus::Converged {
        if let Some((_, bx)) = best {
            x = bx;
        }
    }
    let x_final = problem.with_exact_slacks(&x);
    let max_violation = true_violation(problem, &x_final).magnitude;
    Ok(DcaResult {
        objective: problem.objective(&x_final),
        x_final,
        max_violation,
        outer_iters: history.len(),
        history,
        status,
        multipliers,
        box_lambda,
        total_inner_iters: total_inner,
        final_beta: beta,
        failure,
    })
}

/// Replays the penalty rule over a recorded history and returns the `β`
/// sequence it implies, starting from `beta0`.
pub fn replay_penalty(history: &[OuterRecord], beta0: f64, delta1: f64, delta2: f64) -> Vec<f64> {
    let mut beta = beta0;
    let mut out = Vec::with_capacity(history.len());
    for rec in history {
        out.push(beta);
        let r = (1.0 / rec.dx_norm).min(rec.lambda_l1 + delta1);
        if beta < r {
            beta += delta2;
        }
    }
    out
}

/// History as CSV with header `k,objective,t_inner,t_actual,dx_norm,beta,inner_iters,step_fraction`.
pub fn history_csv(history: &[OuterRecord]) -> String {
    let mut out = String::from("k,objective,t_inner,t_actual,dx_norm,beta,inner_iters,step_fraction\n");
    for r in history {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{},{},{}\n",
            r.k, r.objective, r.t_inner, r.t_actual, r.dx_norm, r.beta, r.inner_iters, r.step_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qclp::{PowerPart, QuadraticConstraint, SymSparse};
    use crate::split::split;

    /// One bus, `min u0` subject to `z0² + z1² ≤ 1` and `2 − z0 − u0 ≤ 0`.
    /// The optimum is `z = (1, 0)`, `u0 = 1` with multipliers `(1/2, 1)`.
    fn disk_problem() -> QclpProblem {
        let disk = QuadraticConstraint {
            kind: ConstraintKind::VoltUpper,
            part: None,
            quad: SymSparse::symmetrized([(0, 0, 1.0), (1, 1, 1.0)]),
            lin: vec![],
            omega: -1.0,
            bound: 1.0,
            element: 0,
        };
        let cost = QuadraticConstraint {
            kind: ConstraintKind::CostSlack,
            part: Some(PowerPart::Active),
            quad: SymSparse::default(),
            lin: vec![(0, -1.0), (2, -1.0)],
            omega: 2.0,
            bound: 0.0,
            element: 0,
        };
        QclpProblem::from_parts(1, 0, vec![disk, cost], 1).unwrap()
    }

    #[test]
    fn kkt_of_known_solution_is_zero() {
        let p = disk_problem();
        let x = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let r = kkt_residual(&p, &x, &[0.5, 1.0]).unwrap();
        assert!(r.stationarity <= 1e-12 && r.complementarity <= 1e-12 && r.feasibility <= 1e-12);
    }

    #[test]
    fn unconstrained_analog_has_zero_residuals() {
        let p = disk_problem();
        let x = [0.2, 0.1, 0.0, 0.0, 0.0, 0.0];
        let r = kkt_residual(&p, &x, &[0.0, 0.0]).unwrap();
        // c = 1 on u ≥ 0 at u = 0 is dual feasible
        assert_eq!((r.stationarity, r.complementarity, r.feasibility), (0.0, 0.0, 0.0));
    }

    #[test]
    fn voltage_violation_in_both_units() {
        let p = disk_problem();
        let x = [1.1, 0.0, 0.0, 0.0, 0.0, 0.0];
        let v = true_violation(&p, &x);
        assert!((v.squared - 0.21).abs() < 1e-12);
        assert!((v.magnitude - 0.1).abs() < 1e-12);
        assert_eq!(true_violation(&p, &[0.5; 6]).squared, 0.0);
    }

    #[test]
    fn dca_finds_the_disk_optimum() {
        let p = disk_problem();
        let splits: Vec<_> = p
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| split(c, if i == 0 { 1.0 } else { 0.0 }, 2, i).unwrap())
            .collect();
        let params =
            DcaParams { inner_iters: Some(20_000), inner_tol: 1e-12, eps_x: 1e-7, eps_t: 1e-7, ..DcaParams::default() };
        let res = dca_solve(&p, &splits, &params, &p.x0()).unwrap();
        assert_eq!(res.status, DcaStatus::Converged);
        assert!((res.x_final[0] - 1.0).abs() < 1e-5, "{:?}", res.x_final);
        assert!((res.objective - 1.0).abs() < 1e-5);
        let betas: Vec<f64> = res.history.iter().map(|r| r.beta).collect();
        assert_eq!(replay_penalty(&res.history, 1.0, 1.0, 1.0), betas);
        assert!(betas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[]);
        assert_eq!(csv, "k,objective,t_inner,t_actual,dx_norm,beta,inner_iters,step_fraction\n");
    }
}
