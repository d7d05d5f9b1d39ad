//! Random, Kirchhoff-consistent perturbations of an operating point.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::{build_admittance, GridModel, OperatingPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub seed: u64,
    /// Relative magnitude `m`: every real and imaginary voltage part is
    /// scaled by an independent factor in `[1 − m, 1 + m]`.
    pub magnitude: f64,
    /// If set, `magnitude` is only the starting guess and is rescaled until
    /// the largest limit violation (p.u.) is within 10% of this value.
    pub target_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub op: OperatingPoint,
    /// Magnitude actually applied.
    pub magnitude: f64,
    /// Largest limit violation of the perturbed point (p.u.).
    pub violation: f64,
}

fn apply(
    grid_y: &crate::sparse::SparseComplexMatrix,
    v: &[Complex64],
    delta: &[(f64, f64)],
    m: f64,
) -> Result<OperatingPoint> {
    let v: Vec<Complex64> =
        v.iter().zip(delta).map(|(v, (dr, dq))| Complex64::new(v.re * (1.0 + m * dr), v.im * (1.0 + m * dq))).collect();
    OperatingPoint::from_voltages(grid_y, v)
}

/// Perturbs the voltages of `op` and recomputes the powers from them.
pub fn perturb(op: &OperatingPoint, grid: &GridModel, spec: &PerturbSpec) -> Result<Perturbed> {
    check_dim(grid.n_buses(), op.v.len())?;
    if !(spec.magnitude >= 0.0 && spec.magnitude.is_finite()) {
        return Err(Error::Model(format!("perturbation magnitude must be nonnegative, got {}", spec.magnitude)));
    }
    let y = build_admittance(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let delta: Vec<(f64, f64)> =
        (0..op.v.len()).map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect();
    let eval = |m: f64| -> Result<(OperatingPoint, f64)> {
        let p = apply(&y, &op.v, &delta, m)?;
        let viol = p.max_violation(grid).max(0.0);
        Ok((p, viol))
    };

    let Some(target) = spec.target_violation else {
        let (p, viol) = eval(spec.magnitude)?;
        return Ok(Perturbed { op: p, magnitude: spec.magnitude, violation: viol });
    };
    if !(target > 0.0) {
        return Err(Error::Model(format!("target violation must be positive, got {target}")));
    }
    let within = |v: f64| (v - target).abs() <= 0.1 * target;

    let mut hi = if spec.magnitude > 0.0 { spec.magnitude } else { 1e-3 };
    let mut hi_eval = eval(hi)?;
    let mut lo = 0.0;
    for _ in 0..60 {
        if hi_eval.1 >= target {
            break;
        }
        lo = hi;
        hi *= 2.0;
        hi_eval = eval(hi)?;
    }
    if within(hi_eval.1) {
        return Ok(Perturbed { op: hi_eval.0, magnitude: hi, violation: hi_eval.1 });
    }
    if hi_eval.1 < target {
        return Err(Error::Model(format!("no perturbation reaches violation {target}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (p, viol) = eval(mid)?;
        if within(viol) {
            return Ok(Perturbed { op: p, magnitude: mid, violation: viol });
        }
        if viol < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Model(format!("bisection did not reach violation {target}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::powerflow::case_operating_point;

    #[test]
    fn zero_magnitude_is_identity() {
        let case = cases::load("case9").unwrap();
        let op = case_operating_point(&case).unwrap();
        let p = perturb(&op, &case.grid, &PerturbSpec { seed: 1, magnitude: 0.0, target_violation: None }).unwrap();
        assert_eq!(p.op.v, op.v);
    }

    #[test]
    fn output_is_kirchhoff_consistent_and_seeded() {
        let case = cases::load("case9").unwrap();
        let op = case_operating_point(&case).unwrap();
        let spec = PerturbSpec { seed: 11, magnitude: 0.05, target_violation: None };
        let a = perturb(&op, &case.grid, &spec).unwrap();
        let b = perturb(&op, &case.grid, &spec).unwrap();
        assert_eq!(a, b);
        let y = build_admittance(&case.grid);
        assert!(a.op.kirchhoff_mismatch(&y).unwrap() <= 1e-12);
    }
}
