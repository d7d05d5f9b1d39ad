//! Per-iteration cost of the inner solver against grid size.
//!
//! Each case is linearized once around its reference state and the dual is
//! iterated a fixed number of times with the tolerance disabled, so every
//! row of the table measures the same amount of work per iteration.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::alloc::measure_peak;
use crate::cases;
use crate::error::Result;
use crate::grid::{build_admittance, Branch, Bus, GridModel, OperatingPoint};
use crate::inner::{linearize, solve_inner_with, InnerOptions, COLD_START, DEFAULT_EPS};
use crate::powerflow::case_operating_point;
use crate::qclp::assemble_qclp;
use crate::split::{split_all, AlphaRule};

/// A grid and the state it is linearized around.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub name: String,
    pub grid: GridModel,
    pub op: OperatingPoint,
}

impl BenchCase {
    /// A bundled case at its solved power flow.
    pub fn bundled(name: &str) -> Result<Self> {
        let case = cases::load(name)?;
        let op = case_operating_point(&case)?;
        Ok(Self { name: name.into(), grid: case.grid, op })
    }

    /// [`synthetic_radial`] at a flat voltage profile.
    pub fn synthetic(n_buses: usize, seed: u64) -> Result<Self> {
        let grid = synthetic_radial(n_buses, seed);
        let y = build_admittance(&grid);
        let op = OperatingPoint::from_voltages(&y, vec![Complex64::new(1.0, 0.0); n_buses])?;
        Ok(Self { name: format!("synthetic:{n_buses}"), grid, op })
    }

    /// `caseN` from the bundled set or `synthetic:N`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.strip_prefix("synthetic:") {
            Some(n) => {
                let n = n
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n >= 2)
                    .ok_or_else(|| crate::error::Error::Model(format!("bad synthetic size in {name:?}")))?;
                Self::synthetic(n, 0)
            }
            None => Self::bundled(name),
        }
    }
}

/// Random radial MV grid with `n_buses` buses rooted at the slack.
///
/// Bus `k` hangs off one of the five buses before it, which gives long
/// feeders with short laterals. Every bus has a small fixed load; every
/// tenth bus also has a curtailable generator.
pub fn synthetic_radial(n_buses: usize, seed: u64) -> GridModel {
    assert!(n_buses >= 2, "a grid needs at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_base = 40.0;
    let mut buses = vec![Bus::slack(1, 0.9, 1.1)];
    let mut branches = Vec::with_capacity(n_buses - 1);
    for k in 1..n_buses {
        let p = rng.gen_range(0.0..0.01);
        let mut bus = Bus::fixed(k + 1, Complex64::new(p, 0.3 * p), 0.9, 1.1);
        if k % 10 == 0 {
            bus.p_min = p - rng.gen_range(0.02..0.08);
        }
        buses.push(bus);
        let parent = rng.gen_range(k.saturating_sub(5)..k);
        let km = rng.gen_range(0.2..1.5);
        branches.push(Branch::new(parent, k, 0.3 * km / z_base, 0.38 * km / z_base, 1.0));
    }
    GridModel::new(10.0, buses, branches).expect("synthetic grid is consistent")
}

/// One row of the scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub name: String,
    pub buses: usize,
    pub lines: usize,
    /// `M + L`.
    pub size: usize,
    /// Stored entries of the lifted rows.
    pub nnz: usize,
    pub iterations: usize,
    /// Median over repetitions.
    pub seconds_per_iter: f64,
    /// Peak bytes allocated by one linearize-and-solve (absent without the
    /// counting allocator).
    pub peak_bytes: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of time per iteration against `M + L`.
    pub time_slope: Option<f64>,
    pub memory_slope: Option<f64>,
}

impl ScalingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,buses,lines,size,nnz,iterations,seconds_per_iter,peak_bytes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:e},{}\n",
                r.name,
                r.buses,
                r.lines,
                r.size,
                r.nnz,
                r.iterations,
                r.seconds_per_iter,
                r.peak_bytes.map_or(String::new(), |b| b.to_string())
            ));
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// distinct positive `x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-12 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `iterations` inner iterations per case, `repetitions` times each.
pub fn bench_scaling(cases: &[BenchCase], repetitions: usize, iterations: usize) -> Result<ScalingTable> {
    let repetitions = repetitions.max(1);
    let opts = InnerOptions { max_iters: iterations.max(1), tol: 0.0, ..InnerOptions::default() };
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let problem = assemble_qclp(&case.grid, &case.op)?;
        let splits = split_all(&problem, &build_admittance(&case.grid), AlphaRule::Analytic)?;
        let x0 = problem.x0();

        let (nnz, peak_bytes) = {
            let (res, peak) = measure_peak(|| -> Result<usize> {
                let lp = linearize(&problem, &splits, &x0, 1.0, DEFAULT_EPS)?;
                solve_inner_with(&lp, &vec![COLD_START; lp.n_rows()], &opts)?;
                Ok(lp.nnz())
            });
            (res?, peak)
        };

        let lp = linearize(&problem, &splits, &x0, 1.0, DEFAULT_EPS)?;
        let init = vec![COLD_START; lp.n_rows()];
        let mut per_iter = Vec::with_capacity(repetitions);
        let mut iters = 0;
        for _ in 0..repetitions {
            let start = Instant::now();
            let sol = solve_inner_with(&lp, &init, &opts)?;
            per_iter.push(start.elapsed().as_secs_f64() / sol.iterations as f64);
            iters = sol.iterations;
        }
        let (m, l) = (case.grid.n_buses(), case.grid.n_branches());
        rows.push(ScalingRow {
            name: case.name.clone(),
            buses: m,
            lines: l,
            size: m + l,
            nnz,
            iterations: iters,
            seconds_per_iter: median(per_iter),
            peak_bytes,
        });
    }
    let sizes: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.seconds_per_iter).collect();
    let time_slope = loglog_slope(&sizes, &times);
    let memory_slope = if rows.iter().all(|r| r.peak_bytes.is_some()) {
        let mem: Vec<f64> = rows.iter().map(|r| r.peak_bytes.unwrap_or(0) as f64).collect();
        loglog_slope(&sizes, &mem)
    } else {
        None
    };
    Ok(ScalingTable { rows, time_slope, memory_slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[5.0, 5.0], &[1.0, 2.0]), None);
        assert_eq!(loglog_slope(&[5.0], &[1.0]), None);
    }

    #[test]
    fn synthetic_grid_is_a_connected_tree() {
        let g = synthetic_radial(200, 3);
        assert_eq!(g.n_branches(), 199);
        assert!(g.is_connected());
        assert_eq!(synthetic_radial(200, 3), g);
    }

    #[test]
    fn single_case_has_no_slope() {
        let case = BenchCase::bundled("case9").unwrap();
        let t = bench_scaling(&[case], 1, 5).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.time_slope, None);
        assert!(t.to_csv().starts_with("name,buses"));
    }
}
