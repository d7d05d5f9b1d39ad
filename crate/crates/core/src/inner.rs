//! Convexified subproblem and its box-constrained dual.
//!
//! Linearizing the concave part of every row at `x̃` gives rows
//! `zᵀP⁺z + p̂ᵀz + ω̂ ≤ t` with `P⁺ = αD` diagonal. Lifting `y_j = z_j²`
//! (relaxed to `y ≥ z²`) and stacking the rows as `Cz + Dy − d ≤ t` turns
//! the subproblem into
//!
//! ```text
//! min  Σ_i max(0, C_i z + D_i y − d_i) + ε Σ_j y_j    s.t.  y ≥ z²
//! ```
//!
//! where operational rows carry the penalty `β` inside `C`, `D`, `d` and the
//! cost rows (whose slack is the objective) are unscaled. Its dual is
//!
//! ```text
//! min_{0 ≤ λ ≤ 1}  φ(λ) = ¼ Σ_j a_j² / b_j + dᵀλ,   a = Cᵀλ,  b = Dᵀλ + ε
//! ```
//!
//! and the primal is recovered coordinatewise as `z = −a / 2b`, `y = z²`.
//! The optimal value of the subproblem is `−φ(λ*)`.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::qclp::QclpProblem;
use crate::split::SplitConstraint;

/// Default denominator regularization `ε`.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Cold-start value for every multiplier.
///
/// `φ` is positively homogeneous of degree one away from the `ε` scale, so
/// its curvature grows like `1/‖λ‖` towards the origin. Starting at `λ = 0`
/// confines gradient steps to the `ε` scale for thousands of iterations;
/// the box center avoids that corner.
pub const COLD_START: f64 = 0.5;

/// The stacked lifted rows `Cz + Dy − d`.
///
/// `C` and `D` share one sparsity pattern per row (the row's support), and
/// the `D` entries of a row are all equal to `s·α`.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub n_z: usize,
    pub n_x: usize,
    pub beta: f64,
    pub eps: f64,
    /// Originating QCLP row of every lifted row. Rows with an infinite bound
    /// are not lifted.
    pub rows: Vec<usize>,
    /// Lifted rows `0..n_operational` are operational limits.
    pub n_operational: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    c_vals: Vec<f64>,
    d_coef: Vec<f64>,
    pub d: Vec<f64>,
    slack: Vec<Option<usize>>,
}

impl LiftedProblem {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Stored entries of `C` (equal to those of `D`).
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn support(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn c_row(&self, i: usize) -> &[f64] {
        &self.c_vals[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// The common value of the `D` entries in row `i`.
    pub fn d_coef(&self, i: usize) -> f64 {
        self.d_coef[i]
    }

    /// Scale applied to row `i` (`β` for operational rows, 1 otherwise).
    pub fn row_scale(&self, i: usize) -> f64 {
        if i < self.n_operational {
            self.beta
        } else {
            1.0
        }
    }

    /// Picks the lifted entries out of a vector indexed by QCLP row.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&r| full[r]).collect()
    }

    /// Writes lifted entries into a vector indexed by QCLP row; rows that
    /// are not lifted get zero.
    pub fn scatter(&self, lifted: &[f64], n_full: usize) -> Vec<f64> {
        let mut full = vec![0.0; n_full];
        for (&r, &v) in self.rows.iter().zip(lifted) {
            full[r] = v;
        }
        full
    }

    /// `C_i z + D_i y − d_i`.
    pub fn row_value(&self, i: usize, z: &[f64], y: &[f64]) -> f64 {
        let dc = self.d_coef[i];
        self.support(i).iter().zip(self.c_row(i)).map(|(&j, &c)| c * z[j] + dc * y[j]).sum::<f64>() - self.d[i]
    }

    /// `a = Cᵀλ`, `b = Dᵀλ + ε`.
    fn accumulate(&self, lambda: &[f64], a: &mut [f64], b: &mut [f64]) {
        a.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = self.eps);
        for (i, &l) in lambda.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let dl = self.d_coef[i] * l;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                a[j] += self.c_vals[k] * l;
                b[j] += dl;
            }
        }
    }

    fn value_from(&self, lambda: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let quad: f64 = a.iter().zip(b).map(|(a, b)| a * a / b).sum();
        let lin: f64 = self.d.iter().zip(lambda).map(|(d, l)| d * l).sum();
        0.25 * quad + lin
    }

    /// Gradient from `w = a / 2b`: `∇φ_i = Σ_j C_ij w_j − D_i w_j² + d_i`.
    fn gradient_from(&self, w: &[f64], grad: &mut [f64]) {
        for (i, g) in grad.iter_mut().enumerate() {
            let mut lin = 0.0;
            let mut sq = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let wj = w[self.cols[k]];
                lin += self.c_vals[k] * wj;
                sq += wj * wj;
            }
            *g = lin - self.d_coef[i] * sq + self.d[i];
        }
    }
}

/// Builds the lifted convexification of `problem` at `x_tilde` with penalty
/// `beta` in `O(nnz)`.
pub fn linearize(
    problem: &QclpProblem,
    splits: &[SplitConstraint],
    x_tilde: &[f64],
    beta: f64,
    eps: f64,
) -> Result<LiftedProblem> {
    check_dim(problem.n_rows(), splits.len())?;
    check_dim(problem.n_x(), x_tilde.len())?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Solver(format!("penalty must be positive and finite, got {beta}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Solver(format!("regularization must be positive, got {eps}")));
    }
    if x_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("expansion point is not finite".into()));
    }
    let n_z = problem.n_z();
    let mut px = vec![0.0; n_z];
    let mut lin = vec![0.0; n_z];

    let mut lp = LiftedProblem {
        n_z,
        n_x: problem.n_x(),
        beta,
        eps,
        rows: Vec::new(),
        n_operational: 0,
        row_ptr: vec![0],
        cols: Vec::new(),
        c_vals: Vec::new(),
        d_coef: Vec::new(),
        d: Vec::new(),
        slack: Vec::new(),
    };

    for (i, sc) in splits.iter().enumerate() {
        let c = &sc.base;
        if !c.is_active_row() {
            continue;
        }
        let operational = problem.is_operational(i);
        let s = if operational { beta } else { 1.0 };

        for &(r, col, v) in c.quad.entries() {
            px[r] += v * x_tilde[col];
        }
        for &(j, v) in &c.lin {
            if j < n_z {
                lin[j] += v;
            }
        }
        // ω̂ = ω + x̃ᵀP⁻x̃ = ω + α‖x̃_S‖² − x̃ᵀPx̃
        let mut omega_hat = c.omega;
        for &j in &sc.support {
            let xt = x_tilde[j];
            let minus = sc.alpha * xt - px[j];
            omega_hat += xt * minus;
            lp.cols.push(j);
            lp.c_vals.push(s * (lin[j] - 2.0 * minus));
            px[j] = 0.0;
            lin[j] = 0.0;
        }
        lp.row_ptr.push(lp.cols.len());
        lp.d_coef.push(s * sc.alpha);
        lp.d.push(-s * omega_hat);
        lp.rows.push(i);
        lp.slack.push(if operational { None } else { c.slack_index(n_z) });
        if operational {
            lp.n_operational += 1;
        }
    }
    Ok(lp)
}

/// `(φ(λ), ∇φ(λ))` of the dual objective.
pub fn dual_value_grad(lambda: &[f64], lp: &LiftedProblem) -> Result<(f64, Vec<f64>)> {
    check_dim(lp.n_rows(), lambda.len())?;
    let mut a = vec![0.0; lp.n_z];
    let mut b = vec![0.0; lp.n_z];
    lp.accumulate(lambda, &mut a, &mut b);
    let value = lp.value_from(lambda, &a, &b);
    let w: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a / (2.0 * b)).collect();
    let mut grad = vec![0.0; lp.n_rows()];
    lp.gradient_from(&w, &mut grad);
    Ok((value, grad))
}

/// Elementwise clamp to `[0, 1]`.
pub fn project_box(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.clamp(0.0, 1.0)).collect()
}

/// Options for [`solve_inner_with`].
#[derive(Debug, Clone)]
pub struct InnerOptions {
    pub max_iters: usize,
    /// Stop once `‖λ − Π(λ − ∇φ(λ))‖∞` is at most this.
    pub tol: f64,
    /// First trial step; later trials start at twice the last accepted step.
    pub initial_step: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Record one [`TraceRow`] per iteration.
    pub trace: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { max_iters: 1000, tol: 1e-8, initial_step: 1.0, armijo: 1e-4, trace: false }
    }
}

/// One line of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub dual_value: f64,
    pub step: f64,
    pub ls_trials: usize,
    pub pg_norm: f64,
}

/// Renders a trace as CSV with header `iter,dual_value,step,ls_trials,pg_norm`.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iter,dual_value,step,ls_trials,pg_norm\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e},{},{:e}\n", r.iter, r.dual_value, r.step, r.ls_trials, r.pg_norm));
    }
    out
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// Box multipliers in `[0, 1]`, one per lifted row.
    pub lambda: Vec<f64>,
    /// Recovered `[z; u]`.
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Lifted squares, equal to `z ⊙ z`.
    pub y: Vec<f64>,
    /// Per-row violation `max(0, C_i z + D_i y − d_i)` in lifted (scaled) units.
    pub t: Vec<f64>,
    pub iterations: usize,
    pub final_step: f64,
    /// `φ(λ)`; the subproblem value estimate is its negation.
    pub dual_value: f64,
    pub pg_norm: f64,
    /// Whether the projected-gradient tolerance was reached.
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

/// Primal quantities recovered from a dual point.
#[derive(Debug, Clone)]
pub struct PrimalRecovery {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
}

/// `z = −(Cᵀλ) / 2(Dᵀλ + ε)`, `y = z ⊙ z`, `t = max(0, Cz + Dy − d)`; cost
/// row slacks are written into the `u` block of `x`.
pub fn recover_primal(lambda: &[f64], lp: &LiftedProblem) -> Result<PrimalRecovery> {
    check_dim(lp.n_rows(), lambda.len())?;
    let mut a = vec![0.0; lp.n_z];
    let mut b = vec![0.0; lp.n_z];
    lp.accumulate(lambda, &mut a, &mut b);
    let z: Vec<f64> = a.iter().zip(&b).map(|(a, b)| -a / (2.0 * b)).collect();
    let y: Vec<f64> = z.iter().map(|v| v * v).collect();
    let t: Vec<f64> = (0..lp.n_rows()).map(|i| lp.row_value(i, &z, &y).max(0.0)).collect();
    let mut x = vec![0.0; lp.n_x];
    x[..lp.n_z].copy_from_slice(&z);
    for (i, s) in lp.slack.iter().enumerate() {
        if let Some(s) = *s {
            x[s] = t[i];
        }
    }
    Ok(PrimalRecovery { x, z, y, t })
}

/// Lifted primal objective `Σ_i max(0, C_i z + D_i y − d_i) + ε Σ y`.
pub fn lifted_objective(lp: &LiftedProblem, z: &[f64], y: &[f64]) -> f64 {
    let viol: f64 = (0..lp.n_rows()).map(|i| lp.row_value(i, z, y).max(0.0)).sum();
    viol + lp.eps * y.iter().sum::<f64>()
}

/// Solves the dual with default options apart from the cap and tolerance.
pub fn solve_inner(lp: &LiftedProblem, lambda_init: &[f64], max_iters: usize, tol: f64) -> Result<InnerSolution> {
    solve_inner_with(lp, lambda_init, &InnerOptions { max_iters, tol, ..InnerOptions::default() })
}

fn pg_norm(y: &[f64], grad: &[f64]) -> f64 {
    y.iter().zip(grad).map(|(y, g)| (y - (y - g).clamp(0.0, 1.0)).abs()).fold(0.0, f64::max)
}

/// Accelerated projected gradient on the dual with Armijo backtracking and
/// function-value restart. Accepted iterates never increase `φ`.
pub fn solve_inner_with(lp: &LiftedProblem, lambda_init: &[f64], opts: &InnerOptions) -> Result<InnerSolution> {
    let n = lp.n_rows();
    check_dim(n, lambda_init.len())?;
    if opts.max_iters == 0 {
        return Err(Error::Solver("inner iteration cap must be at least 1".into()));
    }
    let nz = lp.n_z;
    let mut a = vec![0.0; nz];
    let mut b = vec![0.0; nz];
    let mut w = vec![0.0; nz];
    let mut grad = vec![0.0; n];
    let mut cand = vec![0.0; n];

    let mut lambda = project_box(lambda_init);
    let mut lambda_prev = lambda.clone();
    lp.accumulate(&lambda, &mut a, &mut b);
    let mut f_lambda = lp.value_from(&lambda, &a, &b);
    if !f_lambda.is_finite() {
        return Err(Error::Solver("dual objective is not finite at the starting point".into()));
    }
    let mut point = lambda.clone();
    let mut theta = 1.0f64;
    let mut step = opts.initial_step / 2.0;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut last_pg = f64::INFINITY;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        lp.accumulate(&point, &mut a, &mut b);
        let f_point = lp.value_from(&point, &a, &b);
        if !f_point.is_finite() {
            return Err(Error::Solver(format!("dual objective became non-finite at iteration {iterations}")));
        }
        for j in 0..nz {
            w[j] = a[j] / (2.0 * b[j]);
        }
        lp.gradient_from(&w, &mut grad);
        let pg = pg_norm(&point, &grad);
        if pg <= opts.tol {
            if f_point <= f_lambda {
                lambda.copy_from_slice(&point);
                f_lambda = f_point;
            }
            last_pg = pg;
            converged = true;
            break;
        }

        let mut trial = 2.0 * step;
        let mut trials = 0;
        let f_cand = loop {
            trials += 1;
            let mut decrease = 0.0;
            for i in 0..n {
                cand[i] = (point[i] - trial * grad[i]).clamp(0.0, 1.0);
                decrease += grad[i] * (cand[i] - point[i]);
            }
            lp.accumulate(&cand, &mut a, &mut b);
            let f = lp.value_from(&cand, &a, &b);
            if f.is_finite() && f <= f_point + opts.armijo * decrease {
                break Some(f);
            }
            trial *= 0.5;
            if trial < 1e-300 {
                break None;
            }
        };
        let Some(f_cand) = f_cand else {
            // no decrease possible along the projected gradient: numerically stationary
            last_pg = pg;
            break;
        };
        step = trial;

        if f_cand <= f_lambda {
            lambda_prev.copy_from_slice(&lambda);
            lambda.copy_from_slice(&cand);
            f_lambda = f_cand;
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = (theta - 1.0) / theta_next;
            for i in 0..n {
                point[i] = (lambda[i] + momentum * (lambda[i] - lambda_prev[i])).clamp(0.0, 1.0);
            }
            theta = theta_next;
        } else {
            theta = 1.0;
            point.copy_from_slice(&lambda);
        }
        last_pg = pg;
        if opts.trace {
            trace.push(TraceRow { iter: iterations, dual_value: f_lambda, step, ls_trials: trials, pg_norm: pg });
        }
    }

    let rec = recover_primal(&lambda, lp)?;
    Ok(InnerSolution {
        lambda,
        x: rec.x,
        z: rec.z,
        y: rec.y,
        t: rec.t,
        iterations,
        final_step: step,
        dual_value: f_lambda,
        pg_norm: last_pg,
        converged,
        trace,
    })
}
