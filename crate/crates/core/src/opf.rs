//! End-to-end curtailment OPF: assemble, split, run the DCA, and map the
//! result back to voltages and powers.

use num_complex::Complex64;

use crate::dca::{dca_solve_warm, DcaParams, DcaResult, WarmStart};
use crate::error::{check_dim, Result};
use crate::grid::{build_admittance, GridModel, OperatingPoint};
use crate::qclp::{assemble_qclp, QclpProblem};
use crate::split::{split_all, AlphaRule, SplitConstraint};

#[derive(Debug, Clone)]
pub struct OpfSolution {
    pub problem: QclpProblem,
    pub splits: Vec<SplitConstraint>,
    pub result: DcaResult,
    /// State reached by applying the voltage change to the starting point.
    pub op: OperatingPoint,
}

/// `v0 + (z[..M] + i z[M..])`.
pub fn voltages_from_z(v0: &[Complex64], z: &[f64]) -> Vec<Complex64> {
    let m = v0.len();
    (0..m).map(|k| v0[k] + Complex64::new(z[k], z[m + k])).collect()
}

/// Assembles and splits the QCLP of `grid` around `op0`.
pub fn prepare(grid: &GridModel, op0: &OperatingPoint, rule: AlphaRule) -> Result<(QclpProblem, Vec<SplitConstraint>)> {
    let problem = assemble_qclp(grid, op0)?;
    let splits = split_all(&problem, &build_admittance(grid), rule)?;
    Ok((problem, splits))
}

/// Solves the curtailment OPF starting from the uncontrolled state `op0`.
pub fn solve_opf(grid: &GridModel, op0: &OperatingPoint, params: &DcaParams, warm: &WarmStart) -> Result<OpfSolution> {
    solve_opf_from(grid, op0, params, warm, None)
}

/// As [`solve_opf`], with the first DCA iterate at voltage deviation `dv`
/// from `op0` (zero when `None`).
pub fn solve_opf_from(
    grid: &GridModel,
    op0: &OperatingPoint,
    params: &DcaParams,
    warm: &WarmStart,
    dv: Option<&[Complex64]>,
) -> Result<OpfSolution> {
    let (problem, splits) = prepare(grid, op0, AlphaRule::Analytic)?;
    let x0 = match dv {
        Some(dv) => {
            check_dim(problem.n_z() / 2, dv.len())?;
            let m = dv.len();
            let mut x = problem.x0();
            for (k, d) in dv.iter().enumerate() {
                x[k] = d.re;
                x[m + k] = d.im;
            }
            problem.with_exact_slacks(&x)
        }
        None => problem.x0(),
    };
    let result = dca_solve_warm(&problem, &splits, params, &x0, warm)?;
    let v = voltages_from_z(&op0.v, &result.x_final[..problem.n_z()]);
    let op = OperatingPoint::from_voltages(&build_admittance(grid), v)?;
    Ok(OpfSolution { problem, splits, result, op })
}
