//! Reader for the numeric subset of MATPOWER version 2 case files.
//!
//! Only `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` are read; other
//! assignments (cost tables, cell arrays of names) are skipped without being
//! evaluated.
//!
//! Conversions into the model conventions of [`crate::grid`]:
//!
//! * bus bounds are net-withdrawal intervals: a bus with load `Pd` and
//!   generators with `Pg ∈ [Pmin, Pmax]` gets `p ∈ [Pd − ΣPmax, Pd − ΣPmin]`;
//! * shunts are stored as `−(Gs + jBs)/baseMVA`, and line charging `b` adds
//!   `−j·b/2` at both ends, so the assembled `Y` is the negated textbook
//!   bus admittance matrix;
//! * `rateA` becomes the current limit `rateA/baseMVA` (0 means unlimited).

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Branch, Bus, GridModel};

/// How off-nominal transformer taps are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TapPolicy {
    /// Fail on any tap ratio other than 0 or 1.
    #[default]
    Reject,
    /// Model every transformer at nominal ratio (logged as a warning).
    Nominal,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MatpowerOptions {
    pub taps: TapPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// Power-flow setpoints carried by the case file, in model conventions.
#[derive(Debug, Clone)]
pub struct Setpoints {
    pub kind: Vec<BusKind>,
    /// Voltage magnitude: generator `Vg` at PV/slack buses, `Vm` elsewhere.
    pub v_mag: Vec<f64>,
    /// Voltage angle in radians (`Va`).
    pub v_ang: Vec<f64>,
    /// Net withdrawal `(Pd − Pg) + j(Qd − Qg)` in p.u.
    pub s: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct MatpowerCase {
    pub name: String,
    pub grid: GridModel,
    pub setpoints: Setpoints,
}

/// Parses a case file with default options (taps rejected).
pub fn parse_matpower(text: &str) -> Result<GridModel> {
    Ok(parse_matpower_case(text, MatpowerOptions::default())?.grid)
}

struct Block {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "Inf" | "inf" => Ok(f64::INFINITY),
            "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
            _ => t.parse::<f64>().map_err(|_| parse_err(line, format!("invalid number `{t}`"))),
        })
        .collect()
}

/// `name → (line, raw text)`.
type Scalars = HashMap<String, (usize, String)>;

/// Scans the file for `mpc.<name> = <scalar>;` and `mpc.<name> = [ ... ];`.
fn scan(text: &str) -> Result<(Scalars, HashMap<String, Block>)> {
    let mut scalars = HashMap::new();
    let mut blocks = HashMap::new();
    let mut current: Option<(String, Block)> = None;
    let mut in_cell = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if in_cell {
            if line.contains('}') {
                in_cell = false;
            }
            continue;
        }
        if let Some((name, mut block)) = current.take() {
            let (body, done) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            for piece in body.split(';') {
                let row = parse_row(piece, line_no)?;
                if !row.is_empty() {
                    block.rows.push((line_no, row));
                }
            }
            if done {
                blocks.insert(name, block);
            } else {
                current = Some((name, block));
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else { continue };
        let Some((name, value)) = rest.split_once('=') else {
            return Err(parse_err(line_no, "expected `mpc.<field> = ...`"));
        };
        let name = name.trim().to_string();
        let value = value.trim();
        if let Some(body) = value.strip_prefix('[') {
            let block = Block { line: line_no, rows: Vec::new() };
            let (body, done) = match body.find(']') {
                Some(pos) => (&body[..pos], true),
                None => (body, false),
            };
            let mut block = block;
            for piece in body.split(';') {
                let row = parse_row(piece, line_no)?;
                if !row.is_empty() {
                    block.rows.push((line_no, row));
                }
            }
            if done {
                blocks.insert(name, block);
            } else {
                current = Some((name, block));
            }
        } else if value.starts_with('{') {
            in_cell = !value.contains('}');
        } else {
            scalars.insert(name, (line_no, value.trim_end_matches(';').trim().to_string()));
        }
    }
    if let Some((name, block)) = current {
        return Err(parse_err(block.line, format!("block `mpc.{name}` is not terminated by `];`")));
    }
    Ok((scalars, blocks))
}

fn require_block<'a>(blocks: &'a HashMap<String, Block>, name: &str, min_cols: usize) -> Result<&'a Block> {
    let block = blocks.get(name).ok_or_else(|| parse_err(0, format!("missing `mpc.{name}` block")))?;
    for (line, row) in &block.rows {
        if row.len() < min_cols {
            return Err(parse_err(
                *line,
                format!("`mpc.{name}` row has {} columns, need at least {min_cols}", row.len()),
            ));
        }
    }
    Ok(block)
}

/// Parses a case file and returns the grid together with its power-flow
/// setpoints.
pub fn parse_matpower_case(text: &str, options: MatpowerOptions) -> Result<MatpowerCase> {
    let name = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("function mpc ="))
        .map(|n| n.trim().to_string())
        .unwrap_or_else(|| "case".to_string());

    let (scalars, blocks) = scan(text)?;
    if let Some((line, version)) = scalars.get("version") {
        if version.trim_matches('\'') != "2" {
            return Err(parse_err(*line, format!("unsupported case format version {version}")));
        }
    }
    let (line, base) = scalars.get("baseMVA").ok_or_else(|| parse_err(0, "missing `mpc.baseMVA`"))?;
    let base_mva: f64 = base.parse().map_err(|_| parse_err(*line, format!("invalid baseMVA `{base}`")))?;

    let bus_rows = require_block(&blocks, "bus", 13)?;
    let gen_rows = require_block(&blocks, "gen", 10)?;
    let branch_rows = require_block(&blocks, "branch", 11)?;

    let mut index = HashMap::new();
    let mut buses = Vec::with_capacity(bus_rows.rows.len());
    let mut kind = Vec::with_capacity(bus_rows.rows.len());
    let mut v_mag = Vec::new();
    let mut v_ang = Vec::new();
    let mut load = Vec::new();
    for (line, row) in &bus_rows.rows {
        let id = row[0];
        if id < 1.0 || id.fract() != 0.0 {
            return Err(parse_err(*line, format!("invalid bus number {id}")));
        }
        let id = id as usize;
        if index.insert(id, buses.len()).is_some() {
            return Err(parse_err(*line, format!("duplicate bus number {id}")));
        }
        let bus_kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            t => return Err(parse_err(*line, format!("unsupported bus type {t} at bus {id}"))),
        };
        let shunt = -Complex64::new(row[4], row[5]) / base_mva;
        buses.push(Bus {
            id,
            v_min: row[12],
            v_max: row[11],
            p_min: 0.0,
            p_max: 0.0,
            q_min: 0.0,
            q_max: 0.0,
            shunt,
            is_slack: bus_kind == BusKind::Slack,
        });
        kind.push(bus_kind);
        v_mag.push(row[7]);
        v_ang.push(row[8].to_radians());
        load.push(Complex64::new(row[2], row[3]) / base_mva);
    }

    let m = buses.len();
    let mut gen_p = vec![(0.0, 0.0); m];
    let mut gen_q = vec![(0.0, 0.0); m];
    let mut gen_out = vec![Complex64::new(0.0, 0.0); m];
    let mut has_gen = vec![false; m];
    for (line, row) in &gen_rows.rows {
        if row[7] <= 0.0 {
            continue;
        }
        let k = *index
            .get(&(row[0] as usize))
            .ok_or_else(|| parse_err(*line, format!("generator at unknown bus {}", row[0])))?;
        has_gen[k] = true;
        gen_out[k] += Complex64::new(row[1], row[2]) / base_mva;
        gen_q[k].0 += row[4] / base_mva;
        gen_q[k].1 += row[3] / base_mva;
        gen_p[k].0 += row[9] / base_mva;
        gen_p[k].1 += row[8] / base_mva;
        if kind[k] != BusKind::Pq {
            v_mag[k] = row[5];
        }
    }

    for k in 0..m {
        let bus = &mut buses[k];
        if bus.is_slack {
            bus.p_min = f64::NEG_INFINITY;
            bus.p_max = f64::INFINITY;
            bus.q_min = f64::NEG_INFINITY;
            bus.q_max = f64::INFINITY;
        } else if has_gen[k] {
            bus.p_min = load[k].re - gen_p[k].1;
            bus.p_max = load[k].re - gen_p[k].0;
            bus.q_min = load[k].im - gen_q[k].1;
            bus.q_max = load[k].im - gen_q[k].0;
        } else {
            bus.p_min = load[k].re;
            bus.p_max = load[k].re;
            bus.q_min = load[k].im;
            bus.q_max = load[k].im;
        }
        if !has_gen[k] && kind[k] == BusKind::Pv {
            log::warn!("bus {} is PV without an in-service generator; treating as PQ", bus.id);
            kind[k] = BusKind::Pq;
        }
    }

    let mut branches = Vec::with_capacity(branch_rows.rows.len());
    for (line, row) in &branch_rows.rows {
        if row[10] <= 0.0 {
            continue;
        }
        let lookup = |id: f64| {
            index
                .get(&(id as usize))
                .copied()
                .ok_or_else(|| parse_err(*line, format!("branch references unknown bus {id}")))
        };
        let (from, to) = (lookup(row[0])?, lookup(row[1])?);
        let (r, x, b_c) = (row[2], row[3], row[4]);
        if r == 0.0 && x == 0.0 {
            return Err(Error::Model(format!("line {line}: branch {} - {} has zero impedance", row[0], row[1])));
        }
        let ratio = row[8];
        if ratio != 0.0 && ratio != 1.0 {
            match options.taps {
                TapPolicy::Reject => {
                    return Err(parse_err(
                        *line,
                        format!("off-nominal tap ratio {ratio} on branch {} - {}", row[0], row[1]),
                    ))
                }
                TapPolicy::Nominal => {
                    log::warn!("line {line}: tap ratio {ratio} modelled at nominal ratio")
                }
            }
        }
        if row[9] != 0.0 {
            return Err(parse_err(*line, format!("phase shift {} is not supported", row[9])));
        }
        let charging = Complex64::new(0.0, -b_c / 2.0);
        buses[from].shunt += charging;
        buses[to].shunt += charging;
        let i_max = if row[5] > 0.0 { row[5] / base_mva } else { f64::INFINITY };
        branches.push(Branch { from, to, r, x, i_max });
    }

    let s = (0..m).map(|k| load[k] - gen_out[k]).collect();
    let grid = GridModel::new(base_mva, buses, branches)?;
    Ok(MatpowerCase { name, grid, setpoints: Setpoints { kind, v_mag, v_ang, s } })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"
function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1   3   0   0   0   0   1   1   0   10  1   1.1 0.9;
    2   1   50  20  0   10  1   1   0   10  1   1.1 0.9;
];
mpc.gen = [
    1   0   0   100 -100    1.02    100 1   200 0;
];
mpc.branch = [
    1   2   0   0.1 0   0   0   0   0   0   1   -360    360;
];
mpc.gencost = [
    2   0   0   2   1   0;
];
mpc.bus_name = {
    'one';
    'two';
};
"#;

    #[test]
    fn two_bus_case() {
        let case = parse_matpower_case(TWO_BUS, MatpowerOptions::default()).unwrap();
        let g = &case.grid;
        assert_eq!(case.name, "tiny");
        assert_eq!(g.n_buses(), 2);
        assert_eq!(g.n_branches(), 1);
        assert!((g.branches[0].y() - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!(g.buses[0].is_slack && g.buses[0].p_max.is_infinite());
        assert_eq!(g.buses[1].p_min, 0.5);
        assert_eq!(g.buses[1].q_max, 0.2);
        assert_eq!(g.buses[1].shunt, Complex64::new(0.0, -0.1));
        assert!(g.branches[0].i_max.is_infinite());
        assert_eq!(case.setpoints.v_mag[0], 1.02);
        assert_eq!(case.setpoints.kind, vec![BusKind::Slack, BusKind::Pq]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = TWO_BUS.replace("2   1   50  20", "2   1   5x0  20");
        match parse_matpower(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unterminated_block() {
        let bad = TWO_BUS.replace("mpc.gencost = [\n    2   0   0   2   1   0;\n];", "mpc.gencost = [\n 2 0 0 2 1 0;");
        assert!(matches!(parse_matpower(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_impedance_is_a_model_error() {
        let bad = TWO_BUS.replace("1   2   0   0.1 0", "1   2   0   0 0");
        assert!(matches!(parse_matpower(&bad), Err(Error::Model(_))));
    }

    #[test]
    fn missing_slack_is_a_model_error() {
        let bad = TWO_BUS.replace("1   3   0   0", "1   2   0   0");
        assert!(matches!(parse_matpower(&bad), Err(Error::Model(_))));
    }

    #[test]
    fn taps_rejected_unless_nominal_requested() {
        let tapped = TWO_BUS.replace("0   0   1   -360", "0.97    0   1   -360");
        assert!(matches!(parse_matpower(&tapped), Err(Error::Parse { .. })));
        let opts = MatpowerOptions { taps: TapPolicy::Nominal };
        assert!(parse_matpower_case(&tapped, opts).is_ok());
    }

    #[test]
    fn phase_shift_rejected() {
        let shifted = TWO_BUS.replace("0   0   1   -360", "0   5   1   -360");
        assert!(parse_matpower_case(&shifted, MatpowerOptions { taps: TapPolicy::Nominal }).is_err());
    }

    #[test]
    fn missing_block() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 10 1 1.1 0.9;\n];";
        assert!(matches!(parse_matpower(text), Err(Error::Parse { .. })));
    }
}
