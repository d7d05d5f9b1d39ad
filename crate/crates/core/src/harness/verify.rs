//! Cross-checks of the sparse production path against the dense oracle on
//! one case.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{build_admittance, GridModel, OperatingPoint};
use crate::inner::{dual_value_grad, linearize, DEFAULT_EPS};
use crate::opf::prepare;
use crate::oracle::{
    dense_admittance, dense_constraint_eval, dense_delta_power, dense_min_eig, dense_power_hessians,
    dense_spectral_radius, dense_split_matrices, finite_diff_gradient,
};
use crate::qclp::{delta_power, PowerPart};
use crate::split::{analytic_power_eigs, AlphaRule};

/// How many random samples each check draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub power_samples: usize,
    pub eval_samples: usize,
    pub gradient_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, power_samples: 100, eval_samples: 20, gradient_samples: 5 }
    }
}

/// Worst discrepancies found; every field is an error, smaller is better,
/// except `min_minus_eig` which should be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyReport {
    pub buses: usize,
    pub rows: usize,
    /// Relative gap between closed-form and dense spectral radii of the
    /// power Hessians.
    pub eig_rel_err: f64,
    /// Smallest dense eigenvalue of `αD − P` over all split rows.
    pub min_minus_eig: f64,
    /// `Δp`, `Δq` (p.u.) against dense complex arithmetic.
    pub delta_power_err: f64,
    /// Row values against fully dense matrices.
    pub eval_err: f64,
    /// Relative ∞-norm gap of the dual gradient to central differences.
    pub gradient_rel_err: f64,
}

impl VerifyReport {
    /// Tolerances used by `dcflow verify`.
    pub fn passes(&self) -> bool {
        self.eig_rel_err <= 1e-9
            && self.min_minus_eig >= -1e-10
            && self.delta_power_err <= 1e-10
            && self.eval_err <= 1e-10
            && self.gradient_rel_err <= 1e-5
    }
}

/// Largest relative spectral-radius error over every bus and both parts.
pub fn eig_fidelity(grid: &GridModel) -> Result<f64> {
    let y = build_admittance(grid);
    let yd = dense_admittance(grid);
    let mut worst = 0.0f64;
    for k in 0..grid.n_buses() {
        let (hr, hq) = dense_power_hessians(&yd, k);
        for (h, part) in [(hr, PowerPart::Active), (hq, PowerPart::Reactive)] {
            let dense = dense_spectral_radius(&h.compressed())?;
            let analytic = analytic_power_eigs(&y, k, part).magnitude;
            worst = worst.max((analytic - dense).abs() / dense.max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

/// Runs every check around `op`.
pub fn verify(grid: &GridModel, op: &OperatingPoint, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (problem, splits) = prepare(grid, op, AlphaRule::Analytic)?;
    let y = build_admittance(grid);
    let yd = dense_admittance(grid);
    let m = grid.n_buses();

    let eig_rel_err = eig_fidelity(grid)?;

    let mut min_minus_eig = f64::INFINITY;
    for (i, sp) in splits.iter().enumerate() {
        if sp.alpha == 0.0 {
            continue;
        }
        let (_, minus) = dense_split_matrices(&problem, i, sp.alpha, &sp.support);
        min_minus_eig = min_minus_eig.min(dense_min_eig(&minus.principal_submatrix(&sp.support))?);
    }

    let mut delta_power_err = 0.0f64;
    for _ in 0..opts.power_samples {
        let z: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let (dp, dq) = delta_power(&z, &y, &op.v)?;
        let (ep, eq) = dense_delta_power(&yd, &op.v, &z);
        for (a, b) in dp.iter().chain(&dq).zip(ep.iter().chain(&eq)) {
            delta_power_err = delta_power_err.max((a - b).abs());
        }
    }

    let mut eval_err = 0.0f64;
    for _ in 0..opts.eval_samples {
        let mut x: Vec<f64> = (0..problem.n_x()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        x[problem.n_z()..].iter_mut().for_each(|u| *u = u.abs());
        let dense = dense_constraint_eval(&problem, &x);
        for (c, d) in problem.constraints.iter().zip(&dense) {
            if c.is_active_row() {
                eval_err = eval_err.max((c.eval(&x) - d).abs());
            }
        }
    }

    let lp = linearize(&problem, &splits, &problem.x0(), 1.0, DEFAULT_EPS)?;
    let mut gradient_rel_err = 0.0f64;
    for _ in 0..opts.gradient_samples {
        let lambda: Vec<f64> = (0..lp.n_rows()).map(|_| rng.gen_range(0.05..1.0)).collect();
        let (_, g) = dual_value_grad(&lambda, &lp)?;
        let fd = finite_diff_gradient(|l| dual_value_grad(l, &lp).map_or(f64::NAN, |r| r.0), &lambda, 1e-6);
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        let gap = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        gradient_rel_err = gradient_rel_err.max(if gap.is_nan() { f64::INFINITY } else { gap / scale });
    }

    Ok(VerifyReport {
        buses: m,
        rows: problem.n_rows(),
        eig_rel_err,
        min_minus_eig: if min_minus_eig.is_finite() { min_minus_eig } else { 0.0 },
        delta_power_err,
        eval_err,
        gradient_rel_err,
    })
}

/// Flat start `v = 1` with the powers it implies; enough for the checks.
pub fn flat_point(grid: &GridModel) -> Result<OperatingPoint> {
    OperatingPoint::from_voltages(&build_admittance(grid), vec![Complex64::new(1.0, 0.0); grid.n_buses()])
}
