//! Human-readable state and outcomes files.
//!
//! State file (`docs/state-format.md`):
//!
//! ```text
//! # rctkg state v1
//! subgroup,arm,stat,count
//! 0,control,12,30
//! 0,treatment,18,31
//! ```
//!
//! Outcomes file: header `subgroup,arm,enrolled,successes`, one row per
//! (subgroup, arm) cell that received patients; missing cells mean zero.

use std::path::Path;

use rctkg_core::{Allocation, Arm, CohortOutcome, StateMatrix};

use crate::error::CliError;

pub const STATE_MAGIC: &str = "# rctkg state v1";
const STATE_HEADER: [&str; 4] = ["subgroup", "arm", "stat", "count"];
const OUTCOME_HEADER: [&str; 4] = ["subgroup", "arm", "enrolled", "successes"];

/// Serializes a state; floats use the shortest round-trip representation.
pub fn write_state(s: &StateMatrix) -> String {
    let mut out = String::new();
    out.push_str(STATE_MAGIC);
    out.push('\n');
    out.push_str(&STATE_HEADER.join(","));
    out.push('\n');
    for (x, arm, stat, count) in s.quadruples() {
        out.push_str(&format!("{x},{},{stat},{count}\n", arm.as_str()));
    }
    out
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

pub fn parse_state(text: &str, path: &Path) -> Result<StateMatrix, CliError> {
    let bad = |line: usize, message: String| CliError::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") };
    if text.lines().next().map(str::trim) != Some(STATE_MAGIC) {
        return Err(bad(1, format!("expected `{STATE_MAGIC}`")));
    }
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if fields(h) == STATE_HEADER => {}
        Some((n, h)) => return Err(bad(n, format!("expected header `{}`, got `{h}`", STATE_HEADER.join(",")))),
        None => return Err(bad(2, "missing header".into())),
    }
    let mut entries = Vec::new();
    for (n, line) in lines {
        let f = fields(line);
        if f.len() != 4 {
            return Err(bad(n, format!("expected 4 fields, got {}", f.len())));
        }
        let x: usize = f[0].parse().map_err(|_| bad(n, format!("bad subgroup `{}`", f[0])))?;
        let arm = Arm::parse(f[1]).ok_or_else(|| bad(n, format!("bad arm `{}`", f[1])))?;
        let stat: f64 = f[2].parse().map_err(|_| bad(n, format!("bad stat `{}`", f[2])))?;
        let count: f64 = f[3].parse().map_err(|_| bad(n, format!("bad count `{}`", f[3])))?;
        entries.push((x, arm, stat, count));
    }
    StateMatrix::from_quadruples(&entries).map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })
}

pub fn read_state(path: &Path) -> Result<StateMatrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse_state(&text, path)
}

/// Enrolled counts and successes of one cohort.
pub fn parse_outcomes(text: &str, subgroups: usize, path: &Path) -> Result<(Allocation, CohortOutcome), CliError> {
    let bad = |line: usize, message: String| CliError::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") };
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if fields(h) == OUTCOME_HEADER => {}
        Some((n, h)) => return Err(bad(n, format!("expected header `{}`, got `{h}`", OUTCOME_HEADER.join(",")))),
        None => return Err(bad(1, "missing header".into())),
    }
    let mut u = Allocation::zeros(subgroups);
    let mut w = CohortOutcome::zeros(subgroups);
    let mut seen = vec![[false; 2]; subgroups];
    for (n, line) in lines {
        let f = fields(line);
        if f.len() != 4 {
            return Err(bad(n, format!("expected 4 fields, got {}", f.len())));
        }
        let x: usize = f[0].parse().map_err(|_| bad(n, format!("bad subgroup `{}`", f[0])))?;
        if x >= subgroups {
            return Err(bad(n, format!("subgroup {x} out of range (state has {subgroups})")));
        }
        let arm = Arm::parse(f[1]).ok_or_else(|| bad(n, format!("bad arm `{}`", f[1])))?;
        if std::mem::replace(&mut seen[x][arm.index()], true) {
            return Err(bad(n, format!("duplicate row for subgroup {x} {}", arm.as_str())));
        }
        let enrolled: u64 = f[2].parse().map_err(|_| bad(n, format!("bad enrolled `{}`", f[2])))?;
        let successes: u64 = f[3].parse().map_err(|_| bad(n, format!("bad successes `{}`", f[3])))?;
        if successes > enrolled {
            return Err(bad(n, format!("{successes} successes exceed {enrolled} enrolled")));
        }
        u.add(x, arm, enrolled);
        w.set(x, arm, successes);
    }
    Ok((u, w))
}

pub fn read_outcomes(path: &Path, subgroups: usize) -> Result<(Allocation, CohortOutcome), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse_outcomes(&text, subgroups, path)
}

/// `(subgroup, arm, count)` table of an allocation.
pub fn allocation_table(u: &Allocation) -> String {
    let mut out = String::from("subgroup,arm,count\n");
    for x in 0..u.subgroup_count() {
        for arm in Arm::BOTH {
            out.push_str(&format!("{x},{},{}\n", arm.as_str(), u.get(x, arm)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rctkg_core::{ArmPosterior, SubgroupPosterior};

    #[test]
    fn state_roundtrips_bit_exactly() {
        let s = StateMatrix::from_subgroups(vec![
            SubgroupPosterior::new(ArmPosterior::new(3.0, 10.0).unwrap(), ArmPosterior::new(0.1, 0.30000000000000004).unwrap()),
            SubgroupPosterior::default(),
        ])
        .unwrap();
        let text = write_state(&s);
        assert!(text.starts_with("# rctkg state v1\nsubgroup,arm,stat,count\n0,control,3,10\n"));
        assert_eq!(parse_state(&text, Path::new("s")).unwrap(), s);
    }

    #[test]
    fn malformed_state_is_rejected() {
        let p = Path::new("s.csv");
        assert!(parse_state("subgroup,arm,stat,count\n", p).is_err());
        let bad = "# rctkg state v1\nsubgroup,arm,stat,count\n0,control,5,3\n0,treatment,0,0\n";
        assert!(parse_state(bad, p).is_err());
        let order = "# rctkg state v1\nsubgroup,arm,stat,count\n0,treatment,0,0\n0,control,0,0\n";
        assert!(parse_state(order, p).is_err());
    }

    #[test]
    fn outcomes_parse_and_validate() {
        let p = Path::new("o.csv");
        let (u, w) = parse_outcomes("subgroup,arm,enrolled,successes\n1,treatment,5,2\n", 2, p).unwrap();
        assert_eq!(u.counts(), &[[0, 0], [0, 5]]);
        assert_eq!(w.counts(), &[[0, 0], [0, 2]]);
        assert!(parse_outcomes("subgroup,arm,enrolled,successes\n0,control,1,2\n", 2, p).is_err());
        assert!(parse_outcomes("subgroup,arm,enrolled,successes\n2,control,1,0\n", 2, p).is_err());
        assert!(parse_outcomes("subgroup,arm,enrolled,successes\n0,control,1,0\n0,control,1,0\n", 2, p).is_err());
    }
}
