//! Grid description, admittance assembly and AC power injections.
//!
//! The admittance matrix follows
//!
//! ```text
//! Y_jl = y_jl                      (j ≠ l, summed over parallel branches)
//! Y_jj = y_sh_j − Σ_{k≠j} y_jk
//! ```
//!
//! and injections are `s = diag(v) conj(Y) conj(v)`. With this sign
//! convention `s` is the net power *withdrawn* at each bus for physical line
//! data, which is why the MATPOWER importer expresses bus bounds as
//! withdrawal intervals (see [`crate::matpower`]).

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sparse::SparseComplexMatrix;

/// A bus with its voltage band and net-power action interval (per unit).
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External (1-based) identifier; internal index is the position in
    /// [`GridModel::buses`].
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Shunt admittance entering the diagonal of `Y`.
    pub shunt: Complex64,
    pub is_slack: bool,
}

impl Bus {
    /// Bus with a fixed net withdrawal `s` and the given voltage band.
    pub fn fixed(id: usize, s: Complex64, v_min: f64, v_max: f64) -> Self {
        Self {
            id,
            v_min,
            v_max,
            p_min: s.re,
            p_max: s.re,
            q_min: s.im,
            q_max: s.im,
            shunt: Complex64::new(0.0, 0.0),
            is_slack: false,
        }
    }

    /// Slack bus: no power limits.
    pub fn slack(id: usize, v_min: f64, v_max: f64) -> Self {
        Self {
            id,
            v_min,
            v_max,
            p_min: f64::NEG_INFINITY,
            p_max: f64::INFINITY,
            q_min: f64::NEG_INFINITY,
            q_max: f64::INFINITY,
            shunt: Complex64::new(0.0, 0.0),
            is_slack: true,
        }
    }
}

/// A series branch between two buses (internal 0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series resistance (p.u.).
    pub r: f64,
    /// Series reactance (p.u.).
    pub x: f64,
    /// Current magnitude limit (p.u.); `f64::INFINITY` for unlimited lines.
    pub i_max: f64,
}

impl Branch {
    pub fn new(from: usize, to: usize, r: f64, x: f64, i_max: f64) -> Self {
        Self { from, to, r, x, i_max }
    }

    /// Series admittance `y = 1 / (r + jx)`.
    pub fn y(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl GridModel {
    /// Validates and wraps the given components.
    pub fn new(base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        let grid = Self { base_mva, buses, branches };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.buses.len();
        if m < 2 {
            return Err(Error::Model(format!("a grid needs at least 2 buses, got {m}")));
        }
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(Error::Model(format!("base power must be positive, got {}", self.base_mva)));
        }
        let slack_count = self.buses.iter().filter(|b| b.is_slack).count();
        if slack_count != 1 {
            return Err(Error::Model(format!("expected exactly one slack bus, found {slack_count}")));
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(Error::Model(format!("duplicate bus id {}", b.id)));
            }
            if !(b.v_min <= b.v_max) || b.v_min < 0.0 {
                return Err(Error::Model(format!(
                    "bus {}: voltage band [{}, {}] is empty or negative",
                    b.id, b.v_min, b.v_max
                )));
            }
            if !(b.p_min <= b.p_max) || !(b.q_min <= b.q_max) {
                return Err(Error::Model(format!("bus {}: empty power interval", b.id)));
            }
            if !(b.shunt.re.is_finite() && b.shunt.im.is_finite()) {
                return Err(Error::Model(format!("bus {}: non-finite shunt", b.id)));
            }
        }
        for (i, br) in self.branches.iter().enumerate() {
            if br.from >= m || br.to >= m {
                return Err(Error::Model(format!("branch {i} references a missing bus")));
            }
            if br.from == br.to {
                return Err(Error::Model(format!("branch {i} is a self-loop")));
            }
            if !(br.r.is_finite() && br.x.is_finite()) || (br.r == 0.0 && br.x == 0.0) {
                return Err(Error::Model(format!(
                    "branch {i} ({} - {}) has zero or non-finite impedance",
                    self.buses[br.from].id, self.buses[br.to].id
                )));
            }
            if !(br.i_max > 0.0) {
                return Err(Error::Model(format!("branch {i} has non-positive current limit")));
            }
        }
        if !self.is_connected() {
            log::warn!("grid graph is not connected");
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.is_slack).expect("validated grid has a slack bus")
    }

    /// Internal index of the bus with external id `id`.
    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Distinct neighbours of every bus.
    pub fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.buses.len()];
        for br in &self.branches {
            adj[br.from].insert(br.to);
            adj[br.to].insert(br.from);
        }
        adj
    }

    /// Largest number of distinct neighbours of any bus.
    pub fn max_degree(&self) -> usize {
        self.adjacency().iter().map(BTreeSet::len).max().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; adj.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for &j in &adj[k] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GridJson = serde_json::from_str(text)?;
        raw.into_model()
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let raw: GridJson = serde_json::from_value(value)?;
        raw.into_model()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(GridJson::from_model(self)).expect("grid JSON is serializable")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GridJson::from_model(self)).expect("grid JSON is serializable")
    }
}

/// Builds the sparse admittance matrix.
pub fn build_admittance(grid: &GridModel) -> SparseComplexMatrix {
    let mut triplets = Vec::with_capacity(4 * grid.branches.len() + grid.buses.len());
    for (k, bus) in grid.buses.iter().enumerate() {
        triplets.push((k, k, bus.shunt));
    }
    for br in &grid.branches {
        let y = br.y();
        triplets.push((br.from, br.to, y));
        triplets.push((br.to, br.from, y));
        triplets.push((br.from, br.from, -y));
        triplets.push((br.to, br.to, -y));
    }
    SparseComplexMatrix::from_triplets(grid.buses.len(), triplets)
}

/// `s = diag(v) conj(Y) conj(v)`, evaluated row by row in `O(nnz(Y))`.
pub fn power_injections(y: &SparseComplexMatrix, v: &[Complex64]) -> Result<Vec<Complex64>> {
    check_dim(y.dim(), v.len())?;
    Ok((0..y.dim())
        .map(|k| {
            let current: Complex64 = y.row(k).map(|(j, yk)| yk * v[j]).sum();
            v[k] * current.conj()
        })
        .collect())
}

/// Complex voltages and net withdrawals describing a grid state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<Complex64>,
    pub s: Vec<Complex64>,
}

impl OperatingPoint {
    /// Operating point with `s` computed from `v`.
    pub fn from_voltages(y: &SparseComplexMatrix, v: Vec<Complex64>) -> Result<Self> {
        let s = power_injections(y, &v)?;
        Ok(Self { v, s })
    }

    /// Largest `|s − diag(v)conj(Y)conj(v)|` over all buses.
    pub fn kirchhoff_mismatch(&self, y: &SparseComplexMatrix) -> Result<f64> {
        check_dim(self.v.len(), self.s.len())?;
        let s = power_injections(y, &self.v)?;
        Ok(s.iter().zip(&self.s).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    /// Signed excess of every limit (p.u.): six per bus (`|v|` upper and
    /// lower, `p` upper and lower, `q` upper and lower), then one per branch.
    /// Positive entries are violations.
    pub fn limit_excess(&self, grid: &GridModel) -> Vec<f64> {
        let mut out = Vec::with_capacity(6 * grid.buses.len() + grid.branches.len());
        for (k, bus) in grid.buses.iter().enumerate() {
            let vm = self.v[k].norm();
            let s = self.s[k];
            out.extend([
                vm - bus.v_max,
                bus.v_min - vm,
                s.re - bus.p_max,
                bus.p_min - s.re,
                s.im - bus.q_max,
                bus.q_min - s.im,
            ]);
        }
        for br in &grid.branches {
            let current = br.y().norm() * (self.v[br.from] - self.v[br.to]).norm();
            out.push(current - br.i_max);
        }
        out
    }

    /// Largest violation of the voltage, current and power limits (p.u.).
    pub fn max_violation(&self, grid: &GridModel) -> f64 {
        self.limit_excess(grid).into_iter().filter(|e| !e.is_nan()).fold(0.0, f64::max)
    }
}

// Canonical JSON schema. Infinite bounds and limits are written as `null`.

#[derive(Debug, Serialize, Deserialize)]
struct GridJson {
    base_mva: f64,
    buses: Vec<BusJson>,
    branches: Vec<BranchJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusJson {
    id: usize,
    v_min: f64,
    v_max: f64,
    p_min: Option<f64>,
    p_max: Option<f64>,
    q_min: Option<f64>,
    q_max: Option<f64>,
    #[serde(default)]
    g_sh: f64,
    #[serde(default)]
    b_sh: f64,
    #[serde(default)]
    slack: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchJson {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    i_max: Option<f64>,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl GridJson {
    fn from_model(grid: &GridModel) -> Self {
        Self {
            base_mva: grid.base_mva,
            buses: grid
                .buses
                .iter()
                .map(|b| BusJson {
                    id: b.id,
                    v_min: b.v_min,
                    v_max: b.v_max,
                    p_min: finite_or_none(b.p_min),
                    p_max: finite_or_none(b.p_max),
                    q_min: finite_or_none(b.q_min),
                    q_max: finite_or_none(b.q_max),
                    g_sh: b.shunt.re,
                    b_sh: b.shunt.im,
                    slack: b.is_slack,
                })
                .collect(),
            branches: grid
                .branches
                .iter()
                .map(|br| BranchJson {
                    from: grid.buses[br.from].id,
                    to: grid.buses[br.to].id,
                    r: br.r,
                    x: br.x,
                    i_max: finite_or_none(br.i_max),
                })
                .collect(),
        }
    }

    fn into_model(self) -> Result<GridModel> {
        let index: HashMap<usize, usize> = self.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                v_min: b.v_min,
                v_max: b.v_max,
                p_min: b.p_min.unwrap_or(f64::NEG_INFINITY),
                p_max: b.p_max.unwrap_or(f64::INFINITY),
                q_min: b.q_min.unwrap_or(f64::NEG_INFINITY),
                q_max: b.q_max.unwrap_or(f64::INFINITY),
                shunt: Complex64::new(b.g_sh, b.b_sh),
                is_slack: b.slack,
            })
            .collect();
        let lookup = |id: usize| {
            index.get(&id).copied().ok_or_else(|| Error::Model(format!("branch references unknown bus id {id}")))
        };
        let branches = self
            .branches
            .into_iter()
            .map(|br| {
                Ok(Branch {
                    from: lookup(br.from)?,
                    to: lookup(br.to)?,
                    r: br.r,
                    x: br.x,
                    i_max: br.i_max.unwrap_or(f64::INFINITY),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GridModel::new(self.base_mva, buses, branches)
    }
}
