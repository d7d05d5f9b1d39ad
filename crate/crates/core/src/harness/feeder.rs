//! Synthetic 18-bus rural MV feeder and a one-day profile with a midday
//! PV peak.
//!
//! The slack (the HV/MV transformer) sits in the middle with two feeders
//! leaving it. Overhead lines of a 20 kV rural network are modelled with
//! `0.3 + j0.38 Ω/km` on a 10 MVA base (`Z_base = 40 Ω`). PV plants sit at
//! the ends of the feeders and laterals, so the midday in-feed pushes the
//! far ends above the band unless it is curtailed.

use std::collections::BTreeMap;

use num_complex::Complex64;

use super::sim::{Policy, SimScenario};
use crate::grid::{Branch, Bus, GridModel};

/// Lower edge of the simulation voltage band (p.u.).
pub const V_MIN: f64 = 0.9;
/// Upper edge of the simulation voltage band (p.u.).
pub const V_MAX: f64 = 1.07;

const BASE_MVA: f64 = 10.0;
const Z_BASE: f64 = 20.0 * 20.0 / BASE_MVA;
const R_PER_KM: f64 = 0.3;
const X_PER_KM: f64 = 0.38;
/// Thermal limit of the overhead line (about 290 A at 20 kV).
const I_MAX: f64 = 1.0;

/// `(from, to, length in km)` with 1-based bus ids; bus 1 is the slack.
const LINES: [(usize, usize, f64); 17] = [
    (1, 2, 3.0),
    (2, 3, 3.0),
    (3, 4, 2.5),
    (4, 5, 2.5),
    (5, 6, 2.0),
    (6, 7, 2.0),
    (7, 8, 2.0),
    (8, 9, 2.0),
    (4, 10, 2.0),
    (10, 11, 2.5),
    (1, 12, 3.0),
    (12, 13, 3.0),
    (13, 14, 2.5),
    (14, 15, 3.0),
    (13, 16, 2.0),
    (16, 17, 2.0),
    (17, 18, 2.5),
];

/// PV buses and their rated in-feed (p.u.).
pub const PV_RATED: [(usize, f64); 5] = [(7, 0.3), (9, 0.5), (11, 0.4), (15, 0.5), (18, 0.45)];

/// Peak load per non-slack bus (p.u.) and its power factor.
const LOAD_PEAK: f64 = 0.015;
const LOAD_PF: f64 = 0.95;

/// The feeder with fixed zero injections; the simulation overwrites the
/// power intervals at every step.
pub fn feeder18() -> GridModel {
    let mut buses = vec![Bus::slack(1, V_MIN, V_MAX)];
    buses.extend((2..=18).map(|id| Bus::fixed(id, Complex64::new(0.0, 0.0), V_MIN, V_MAX)));
    let branches = LINES
        .iter()
        .map(|&(f, t, km)| Branch::new(f - 1, t - 1, R_PER_KM * km / Z_BASE, X_PER_KM * km / Z_BASE, I_MAX))
        .collect();
    GridModel::new(BASE_MVA, buses, branches).expect("feeder data is consistent")
}

/// Normalized PV availability at hour `h` (sunrise 6:00, sunset 20:00).
pub fn pv_shape(h: f64) -> f64 {
    if !(6.0..=20.0).contains(&h) {
        return 0.0;
    }
    let s = (std::f64::consts::PI * (h - 6.0) / 14.0).sin();
    s * s
}

/// Normalized residential load with a morning and an evening peak.
pub fn load_shape(h: f64) -> f64 {
    let bump = |c: f64, w: f64| (-((h - c) / w).powi(2)).exp();
    0.45 + 0.25 * bump(8.0, 1.5) + 0.3 * bump(19.0, 2.0)
}

/// One day on the 18-bus feeder with `dt_minutes` steps.
pub fn day_scenario(dt_minutes: f64, policy: Policy) -> SimScenario {
    let grid = feeder18();
    let horizon = (24.0 * 60.0 / dt_minutes).round() as usize;
    let hours: Vec<f64> = (0..horizon).map(|t| t as f64 * dt_minutes / 60.0).collect();
    let tan_phi = (1.0 / (LOAD_PF * LOAD_PF) - 1.0).sqrt();
    let mut profiles = BTreeMap::new();
    let mut q_profiles = BTreeMap::new();
    let mut res = BTreeMap::new();
    for id in 2..=18 {
        let rated = PV_RATED.iter().find(|(b, _)| *b == id).map(|(_, r)| *r);
        let load: Vec<f64> = hours.iter().map(|&h| LOAD_PEAK * load_shape(h)).collect();
        let pv: Vec<f64> = hours.iter().map(|&h| rated.map_or(0.0, |r| r * pv_shape(h))).collect();
        profiles.insert(id, pv.iter().zip(&load).map(|(g, l)| g - l).collect());
        q_profiles.insert(id, load.iter().map(|l| -l * tan_phi).collect());
        if let Some(r) = rated {
            res.insert(id, super::sim::ResUnit { rated: r, available: pv });
        }
    }
    SimScenario {
        grid,
        horizon,
        dt_minutes,
        profiles,
        q_profiles,
        res,
        policy,
        slack_voltage: 1.0,
        margin: super::sim::DEFAULT_MARGIN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feeder_is_radial_and_connected() {
        let g = feeder18();
        assert_eq!((g.n_buses(), g.n_branches()), (18, 17));
        assert!(g.is_connected());
        assert_eq!(g.slack_index(), 0);
        assert_eq!(g.adjacency()[0].len(), 2);
    }

    #[test]
    fn pv_peaks_at_one_pm() {
        assert_eq!(pv_shape(3.0), 0.0);
        assert!((pv_shape(13.0) - 1.0).abs() < 1e-12);
        assert!(pv_shape(12.0) < pv_shape(13.0));
    }
}
