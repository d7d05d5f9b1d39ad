//! Time-series curtailment simulation.
//!
//! At every step the uncontrolled state (all RES at their available
//! in-feed) is computed by a power flow. If it violates a limit the policy
//! acts: either every RES unit is capped at a fraction of its rating, or the
//! curtailment OPF picks the smallest deviation. The resulting setpoints are
//! then applied through a second power flow, so reported voltages are always
//! Kirchhoff-consistent.
//!
//! Energies are in p.u.·h.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::reference::FEASIBILITY_TOL;
use crate::dca::{DcaParams, DcaStatus, WarmStart};
use crate::error::{Error, Result};
use crate::grid::{build_admittance, GridModel, OperatingPoint};
use crate::matpower::BusKind;
use crate::powerflow::{solve_power_flow, PowerFlowSpec};
use crate::sparse::SparseComplexMatrix;

/// Default tightening of the voltage band handed to the OPF (p.u.).
pub const DEFAULT_MARGIN: f64 = 0.002;

/// Inner iteration cap used by the OPF policy unless overridden.
pub const SIM_INNER_ITERS: usize = 200;

/// A curtailable RES unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResUnit {
    pub rated: f64,
    /// Available active in-feed per step; already contained in the bus
    /// profile.
    pub available: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpfPolicy {
    #[serde(flatten)]
    pub params: DcaParams,
    /// Carry multipliers, penalty and voltages from the previous solve.
    pub warm_start: bool,
    /// Cap used for the rule-based fallback when a solve fails.
    pub fallback_fraction: f64,
}

impl Default for OpfPolicy {
    fn default() -> Self {
        Self {
            params: DcaParams { inner_iters: Some(SIM_INNER_ITERS), ..DcaParams::default() },
            warm_start: true,
            fallback_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Cap every RES unit at `fraction` of its rating.
    RuleBased {
        fraction: f64,
    },
    DcOpf(OpfPolicy),
}

impl Policy {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::RuleBased { .. } => "rule_based",
            Policy::DcOpf(_) => "dc_opf",
        }
    }
}

/// A simulation run. Bus ids are the external ids of `grid`; buses without
/// a profile have zero injection.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub grid: GridModel,
    pub horizon: usize,
    pub dt_minutes: f64,
    /// Uncontrolled net active injection per step (generation positive).
    pub profiles: BTreeMap<usize, Vec<f64>>,
    /// Net reactive injection per step.
    pub q_profiles: BTreeMap<usize, Vec<f64>>,
    /// Curtailable part of the active injection.
    pub res: BTreeMap<usize, ResUnit>,
    pub policy: Policy,
    pub slack_voltage: f64,
    /// Band tightening for the OPF so that the applied state stays inside
    /// the original band despite the DCA tolerance.
    pub margin: f64,
}

#[derive(Serialize, Deserialize)]
struct ScenarioJson {
    grid: serde_json::Value,
    horizon: usize,
    dt_minutes: f64,
    profiles: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    q_profiles: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    res: BTreeMap<usize, ResUnit>,
    policy: Policy,
    #[serde(default = "one")]
    slack_voltage: f64,
    #[serde(default = "default_margin")]
    margin: f64,
}

fn one() -> f64 {
    1.0
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl SimScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ScenarioJson = serde_json::from_str(text)?;
        let scenario = Self {
            grid: GridModel::from_json_value(raw.grid)?,
            horizon: raw.horizon,
            dt_minutes: raw.dt_minutes,
            profiles: raw.profiles,
            q_profiles: raw.q_profiles,
            res: raw.res,
            policy: raw.policy,
            slack_voltage: raw.slack_voltage,
            margin: raw.margin,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let raw = ScenarioJson {
            grid: self.grid.to_json_value(),
            horizon: self.horizon,
            dt_minutes: self.dt_minutes,
            profiles: self.profiles.clone(),
            q_profiles: self.q_profiles.clone(),
            res: self.res.clone(),
            policy: self.policy.clone(),
            slack_voltage: self.slack_voltage,
            margin: self.margin,
        };
        serde_json::to_string_pretty(&raw).expect("scenario JSON is serializable")
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Self { policy, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Model(msg));
        if self.horizon == 0 || !(self.dt_minutes > 0.0) {
            return bad("horizon and dt_minutes must be positive".into());
        }
        if !(self.margin >= 0.0) || !(self.slack_voltage > 0.0) {
            return bad("margin must be nonnegative and slack_voltage positive".into());
        }
        for (name, map) in [("profiles", &self.profiles), ("q_profiles", &self.q_profiles)] {
            for (id, series) in map {
                if self.grid.index_of(*id).is_none() {
                    return bad(format!("{name} references unknown bus id {id}"));
                }
                if series.len() != self.horizon {
                    return bad(format!("{name}[{id}] has {} values, horizon is {}", series.len(), self.horizon));
                }
                if series.iter().any(|v| !v.is_finite()) {
                    return bad(format!("{name}[{id}] contains non-finite values"));
                }
            }
        }
        for (id, unit) in &self.res {
            let Some(k) = self.grid.index_of(*id) else {
                return bad(format!("res references unknown bus id {id}"));
            };
            if self.grid.buses[k].is_slack {
                return bad(format!("res unit at slack bus {id}"));
            }
            if unit.available.len() != self.horizon {
                return bad(format!("res[{id}] has {} values, horizon is {}", unit.available.len(), self.horizon));
            }
            if !(unit.rated >= 0.0) || unit.available.iter().any(|a| !(*a >= 0.0)) {
                return bad(format!("res[{id}] must have nonnegative rating and availability"));
            }
        }
        match &self.policy {
            Policy::RuleBased { fraction } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                bad(format!("rule-based fraction {fraction} outside (0, 1]"))
            }
            Policy::DcOpf(p) if !(p.fallback_fraction > 0.0 && p.fallback_fraction <= 1.0) => {
                bad(format!("fallback fraction {} outside (0, 1]", p.fallback_fraction))
            }
            _ => Ok(()),
        }
    }
}

/// One simulation step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub intervened: bool,
    /// The OPF failed and the rule-based fallback was applied.
    pub fallback: bool,
    pub solve_seconds: Option<f64>,
    pub inner_iters: Option<usize>,
    pub outer_iters: Option<usize>,
    pub status: Option<DcaStatus>,
    pub available: f64,
    pub infeed: f64,
    /// Largest limit violation of the applied state (p.u.).
    pub violation: f64,
    /// Why the OPF result was rejected, for fallback steps.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub policy: String,
    pub horizon: usize,
    pub dt_minutes: f64,
    /// Applied voltage magnitudes, one row per step, in bus order.
    pub voltages: Vec<Vec<f64>>,
    pub available_energy: f64,
    pub infeed_energy: f64,
    pub curtailed_energy: f64,
    pub interventions: usize,
    pub fallbacks: usize,
    pub steps: Vec<StepRecord>,
}

impl SimReport {
    pub fn solve_seconds(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.solve_seconds).collect()
    }

    /// Inner iterations of every OPF solve, in order.
    pub fn inner_iters(&self) -> Vec<usize> {
        self.steps.iter().filter_map(|s| s.inner_iters).collect()
    }

    pub fn v_range(&self) -> (f64, f64) {
        self.voltages.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn max_violation(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.violation))
    }

    /// `available − infeed − curtailed`; zero up to rounding.
    pub fn energy_balance(&self) -> f64 {
        self.available_energy - self.infeed_energy - self.curtailed_energy
    }

    /// Voltage traces as CSV: `t,v_<id>...`.
    pub fn voltage_csv(&self, grid: &GridModel) -> String {
        let mut out = String::from("t");
        for b in &grid.buses {
            out.push_str(&format!(",v_{}", b.id));
        }
        out.push('\n');
        for (t, row) in self.voltages.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-step data resolved to internal bus indices.
struct Step {
    /// Uncontrolled net withdrawal.
    s0: Vec<Complex64>,
    /// `(bus index, available, rated)` for every RES unit.
    res: Vec<(usize, f64, f64)>,
}

struct Simulator<'a> {
    sc: &'a SimScenario,
    y: SparseComplexMatrix,
    kind: Vec<BusKind>,
    res_index: Vec<(usize, f64, &'a [f64])>,
}

impl<'a> Simulator<'a> {
    fn new(sc: &'a SimScenario) -> Self {
        let kind = sc.grid.buses.iter().map(|b| if b.is_slack { BusKind::Slack } else { BusKind::Pq }).collect();
        let res_index = sc
            .res
            .iter()
            .map(|(id, u)| (sc.grid.index_of(*id).expect("validated"), u.rated, u.available.as_slice()))
            .collect();
        Self { sc, y: build_admittance(&sc.grid), kind, res_index }
    }

    fn step(&self, t: usize) -> Step {
        let grid = &self.sc.grid;
        let mut s0 = vec![Complex64::new(0.0, 0.0); grid.n_buses()];
        for (id, series) in &self.sc.profiles {
            s0[grid.index_of(*id).expect("validated")].re = -series[t];
        }
        for (id, series) in &self.sc.q_profiles {
            s0[grid.index_of(*id).expect("validated")].im = -series[t];
        }
        let res = self.res_index.iter().map(|&(k, rated, avail)| (k, avail[t], rated)).collect();
        Step { s0, res }
    }

    fn power_flow(&self, s: &[Complex64]) -> Result<OperatingPoint> {
        let v0 = Complex64::new(self.sc.slack_voltage, 0.0);
        let spec = PowerFlowSpec { kind: self.kind.clone(), v_set: vec![v0; s.len()], s_set: s.to_vec() };
        let v = solve_power_flow(&self.y, &spec, 1e-11, 30)?;
        OperatingPoint::from_voltages(&self.y, v)
    }

    /// Withdrawals with each RES unit reduced by `curtail[i]`.
    fn apply(&self, step: &Step, curtail: &[f64]) -> Vec<Complex64> {
        let mut s = step.s0.clone();
        for (&(k, ..), c) in step.res.iter().zip(curtail) {
            s[k].re += c;
        }
        s
    }

    fn rule_based(&self, step: &Step, fraction: f64) -> Vec<f64> {
        step.res.iter().map(|&(_, avail, rated)| (avail - fraction * rated).max(0.0)).collect()
    }

    /// The grid for one step: fixed powers except the RES intervals, voltage
    /// band tightened by `margin`. The slack magnitude is pinned to its
    /// setpoint; otherwise the OPF would move the transformer voltage at no
    /// cost instead of curtailing.
    fn step_grid(&self, step: &Step, margin: f64) -> GridModel {
        let mut grid = self.sc.grid.clone();
        for (k, bus) in grid.buses.iter_mut().enumerate() {
            if bus.is_slack {
                continue;
            }
            let s = step.s0[k];
            (bus.p_min, bus.p_max, bus.q_min, bus.q_max) = (s.re, s.re, s.im, s.im);
        }
        for &(k, avail, _) in &step.res {
            grid.buses[k].p_max += avail;
        }
        for bus in &mut grid.buses {
            if bus.is_slack {
                (bus.v_min, bus.v_max) = (self.sc.slack_voltage, self.sc.slack_voltage);
            } else {
                bus.v_min += margin;
                bus.v_max -= margin;
            }
        }
        grid
    }
}

struct OpfState {
    warm: WarmStart,
    v_prev: Option<Vec<Complex64>>,
}

#[doc(hidden)]
pub fn debug_step(sc: &SimScenario, t: usize) -> Result<(GridModel, OperatingPoint)> {
    let sim = Simulator::new(sc);
    let step = sim.step(t);
    Ok((sim.step_grid(&step, sc.margin), sim.power_flow(&step.s0)?))
}

/// Runs the scenario.
pub fn run_simulation(sc: &SimScenario) -> Result<SimReport> {
    sc.validate()?;
    let sim = Simulator::new(sc);
    let dt_h = sc.dt_minutes / 60.0;
    let mut report = SimReport {
        policy: sc.policy.label().into(),
        horizon: sc.horizon,
        dt_minutes: sc.dt_minutes,
        voltages: Vec::with_capacity(sc.horizon),
        available_energy: 0.0,
        infeed_energy: 0.0,
        curtailed_energy: 0.0,
        interventions: 0,
        fallbacks: 0,
        steps: Vec::with_capacity(sc.horizon),
    };
    let mut state = OpfState { warm: WarmStart::default(), v_prev: None };
    let n_res = sc.res.len();

    for t in 0..sc.horizon {
        let step = sim.step(t);
        let limits = sim.step_grid(&step, 0.0);
        let uncontrolled = sim.power_flow(&step.s0)?;
        let mut rec = StepRecord {
            t,
            intervened: false,
            fallback: false,
            solve_seconds: None,
            inner_iters: None,
            outer_iters: None,
            status: None,
            available: step.res.iter().map(|r| r.1).sum(),
            infeed: 0.0,
            violation: 0.0,
            error: None,
        };
        let (curtail, applied) = if uncontrolled.max_violation(&limits) <= FEASIBILITY_TOL {
            (vec![0.0; n_res], uncontrolled)
        } else {
            rec.intervened = true;
            report.interventions += 1;
            match &sc.policy {
                Policy::RuleBased { fraction } => {
                    let c = sim.rule_based(&step, *fraction);
                    let op = sim.power_flow(&sim.apply(&step, &c))?;
                    (c, op)
                }
                Policy::DcOpf(p) => match opf_step(&sim, &step, &uncontrolled, p, &mut state, &mut rec) {
                    Ok(done) => done,
                    Err(e) => {
                        warn!("step {t}: OPF failed ({e}), applying rule-based fallback");
                        rec.fallback = true;
                        rec.error = Some(e.to_string());
                        report.fallbacks += 1;
                        let c = sim.rule_based(&step, p.fallback_fraction);
                        let op = sim.power_flow(&sim.apply(&step, &c))?;
                        (c, op)
                    }
                },
            }
        };
        let curtailed: f64 = curtail.iter().sum();
        rec.infeed = rec.available - curtailed;
        rec.violation = applied.max_violation(&limits);
        report.available_energy += rec.available * dt_h;
        report.infeed_energy += rec.infeed * dt_h;
        report.curtailed_energy += curtailed * dt_h;
        report.voltages.push(applied.v.iter().map(|v| v.norm()).collect());
        report.steps.push(rec);
    }
    Ok(report)
}

fn opf_step(
    sim: &Simulator,
    step: &Step,
    op0: &OperatingPoint,
    policy: &OpfPolicy,
    state: &mut OpfState,
    rec: &mut StepRecord,
) -> Result<(Vec<f64>, OperatingPoint)> {
    let grid = sim.step_grid(step, sim.sc.margin);
    let start = Instant::now();
    let warm = if policy.warm_start { state.warm.clone() } else { WarmStart::default() };
    let x0 = match (&state.v_prev, policy.warm_start) {
        (Some(v), true) => Some(v.iter().zip(&op0.v).map(|(a, b)| a - b).collect::<Vec<_>>()),
        _ => None,
    };
    let sol = crate::opf::solve_opf_from(&grid, op0, &policy.params, &warm, x0.as_deref())?;
    rec.solve_seconds = Some(start.elapsed().as_secs_f64());
    rec.inner_iters = Some(sol.result.total_inner_iters);
    rec.outer_iters = Some(sol.result.outer_iters);
    rec.status = Some(sol.result.status);
    debug!(
        "step {}: {:?} after {} outer / {} inner iterations",
        rec.t, sol.result.status, sol.result.outer_iters, sol.result.total_inner_iters
    );
    let curtail: Vec<f64> =
        step.res.iter().map(|&(k, avail, _)| (sol.op.s[k].re - step.s0[k].re).clamp(0.0, avail)).collect();
    let applied = sim.power_flow(&sim.apply(step, &curtail))?;
    let violation = applied.max_violation(&sim.step_grid(step, 0.0));
    if violation > FEASIBILITY_TOL {
        return Err(Error::Solver(format!("applied OPF setpoints violate limits by {violation:e}")));
    }
    state.warm = WarmStart { box_lambda: Some(sol.result.box_lambda.clone()), beta: Some(sol.result.final_beta) };
    state.v_prev = Some(sol.op.v.clone());
    Ok((curtail, applied))
}

/// Warm versus cold OPF runs of the same scenario.
#[derive(Debug, Clone, Serialize)]
pub struct WarmColdComparison {
    pub warm: SimReport,
    pub cold: SimReport,
    /// Mean inner iterations per solve, excluding each run's first solve.
    pub warm_mean_inner: f64,
    pub cold_mean_inner: f64,
    pub warm_mean_seconds: f64,
    pub cold_mean_seconds: f64,
}

impl WarmColdComparison {
    /// `1 − warm / cold` on mean inner iterations.
    pub fn reduction(&self) -> f64 {
        1.0 - self.warm_mean_inner / self.cold_mean_inner
    }
}

fn mean_after_first<T: Copy + Into<f64>>(xs: &[T]) -> f64 {
    let rest = xs.get(1..).unwrap_or(&[]);
    if rest.is_empty() {
        return f64::NAN;
    }
    rest.iter().map(|&x| x.into()).sum::<f64>() / rest.len() as f64
}

/// Runs the OPF policy of `sc` (or the default one) with and without warm
/// starts.
pub fn compare_warm_cold(sc: &SimScenario) -> Result<WarmColdComparison> {
    let base = match &sc.policy {
        Policy::DcOpf(p) => p.clone(),
        Policy::RuleBased { .. } => OpfPolicy::default(),
    };
    let warm = run_simulation(&sc.with_policy(Policy::DcOpf(OpfPolicy { warm_start: true, ..base.clone() })))?;
    let cold = run_simulation(&sc.with_policy(Policy::DcOpf(OpfPolicy { warm_start: false, ..base })))?;
    let iters = |r: &SimReport| r.inner_iters().into_iter().map(|n| n as f64).collect::<Vec<_>>();
    Ok(WarmColdComparison {
        warm_mean_inner: mean_after_first(&iters(&warm)),
        cold_mean_inner: mean_after_first(&iters(&cold)),
        warm_mean_seconds: mean_after_first(&warm.solve_seconds()),
        cold_mean_seconds: mean_after_first(&cold.solve_seconds()),
        warm,
        cold,
    })
}
