//! MATPOWER test cases bundled with the crate.
//!
//! The files are the unmodified case files distributed with MATPOWER. Cases
//! with off-nominal transformer taps (14, 57 and 118 buses) are loaded with
//! [`TapPolicy::Nominal`].

use crate::error::{Error, Result};
use crate::matpower::{parse_matpower_case, MatpowerCase, MatpowerOptions, TapPolicy};

pub const CASE9: &str = include_str!("../data/case9.m");
pub const CASE14: &str = include_str!("../data/case14.m");
pub const CASE30: &str = include_str!("../data/case30.m");
pub const CASE57: &str = include_str!("../data/case57.m");
pub const CASE118: &str = include_str!("../data/case118.m");

/// Names accepted by [`load`].
pub const NAMES: [&str; 5] = ["case9", "case14", "case30", "case57", "case118"];

/// Raw text of a bundled case.
pub fn text(name: &str) -> Option<&'static str> {
    match name {
        "case9" => Some(CASE9),
        "case14" => Some(CASE14),
        "case30" => Some(CASE30),
        "case57" => Some(CASE57),
        "case118" => Some(CASE118),
        _ => None,
    }
}

/// Parses a bundled case by name.
pub fn load(name: &str) -> Result<MatpowerCase> {
    let text = text(name).ok_or_else(|| Error::Model(format!("no bundled case named `{name}`")))?;
    parse_matpower_case(text, MatpowerOptions { taps: TapPolicy::Nominal })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_rows(text: &str, block: &str) -> usize {
        let start = text.find(&format!("mpc.{block} = [")).unwrap();
        let body = &text[start..];
        let end = body.find("];").unwrap();
        body[..end].lines().skip(1).filter(|l| !l.trim().is_empty()).count()
    }

    #[test]
    fn bundled_sizes_match_the_files() {
        for name in NAMES {
            let case = load(name).unwrap();
            let raw = text(name).unwrap();
            assert_eq!(case.grid.n_buses(), count_rows(raw, "bus"), "{name}");
            assert_eq!(case.grid.n_branches(), count_rows(raw, "branch"), "{name}");
        }
    }

    #[test]
    fn case9_and_case30_sizes() {
        let c9 = load("case9").unwrap();
        assert_eq!((c9.grid.n_buses(), c9.grid.n_branches()), (9, 9));
        let c30 = load("case30").unwrap();
        assert_eq!((c30.grid.n_buses(), c30.grid.n_branches()), (30, 41));
    }

    #[test]
    fn case30_needs_no_tap_folding() {
        assert!(crate::matpower::parse_matpower(CASE30).is_ok());
        assert!(crate::matpower::parse_matpower(CASE14).is_err());
    }
}
