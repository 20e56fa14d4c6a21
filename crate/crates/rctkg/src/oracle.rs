//! Tiny-instance comparisons between the heuristics and the exact oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rctkg_core::policies::{
    dexfem_action, dp_optimal, enumerated_policy_value, kg_exact_best, rctkg_action, thompson_action, uniform_action,
};
use rctkg_core::{ArmPosterior, LossParams, Result, StateMatrix, SubgroupPosterior, TieBreakRng, UniformMode};

use crate::table::ResultSet;

/// A random state with at most `max` patients per arm.
pub fn random_state<R: Rng>(rng: &mut R, x: usize, max: u64) -> StateMatrix {
    let arm = |rng: &mut R| {
        let n = rng.random_range(0..=max);
        let w = rng.random_range(0..=n);
        ArmPosterior::new(w as f64, n as f64).expect("valid counts")
    };
    let subgroups = (0..x).map(|_| SubgroupPosterior::new(arm(rng), arm(rng))).collect();
    StateMatrix::from_subgroups(subgroups).expect("nonempty")
}

/// `(x, cohort size)` shapes cycled through by [`tiny_instances`]; all keep
/// two-cohort horizons within the dynamic program's bounds.
const SHAPES: [(usize, u64); 5] = [(1, 1), (1, 2), (1, 4), (2, 1), (2, 2)];

pub fn tiny_instances(n: usize, seed: u64) -> Vec<(StateMatrix, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (x, m) = SHAPES[i % SHAPES.len()];
            (random_state(&mut rng, x, 6), m)
        })
        .collect()
}

type Heuristic = fn(&StateMatrix, u64, &mut TieBreakRng) -> Result<rctkg_core::Allocation>;

pub fn heuristics() -> [(&'static str, Heuristic); 4] {
    [
        ("rctkg", |s, m, r| rctkg_action(s, m, &LossParams::default(), r)),
        ("uniform", |s, m, r| uniform_action(s.subgroup_count(), m, UniformMode::Multinomial, r)),
        ("thompson", |s, m, r| thompson_action(s, m, r)),
        ("dexfem", |s, m, r| dexfem_action(s, m, 1.0, r)),
    ]
}

/// Exact expected terminal values on `instances` tiny problems: the one-step
/// oracles, the two-step dynamic program, and every heuristic evaluated by
/// full outcome enumeration.
pub fn oracle_report(instances: usize, seed: u64) -> Result<Vec<ResultSet>> {
    let lp = LossParams::default();
    let mut values = ResultSet::new(
        "oracle",
        &["instance", "subgroups", "cohort_size", "cohorts", "method", "value", "gap_to_dp"],
    );
    let mut checks = ResultSet::new("oracle_checks", &["check", "instances", "passed"]);
    let (mut kg_ok, mut dom_ok) = (0u64, 0u64);
    for (i, (s, m)) in tiny_instances(instances, seed).iter().enumerate() {
        let x = s.subgroup_count();
        let (_, kg) = kg_exact_best(s, *m, &lp)?;
        let (dp1, _) = dp_optimal(s, 1, *m, &lp)?;
        let (dp2, _) = dp_optimal(s, 2, *m, &lp)?;
        if (kg - dp1).abs() < 1e-12 {
            kg_ok += 1;
        }
        values.push(vec![i.into(), x.into(), (*m).into(), 1u32.into(), "kg_exact".into(), kg.into(), (dp1 - kg).into()]);
        values.push(vec![i.into(), x.into(), (*m).into(), 1u32.into(), "dp_optimal".into(), dp1.into(), 0.0.into()]);
        values.push(vec![i.into(), x.into(), (*m).into(), 2u32.into(), "dp_optimal".into(), dp2.into(), 0.0.into()]);
        let mut dominated = true;
        for (name, h) in heuristics() {
            let v = enumerated_policy_value(s, 2, *m, &lp, seed ^ i as u64, h)?;
            dominated &= dp2 >= v - 1e-12;
            values.push(vec![i.into(), x.into(), (*m).into(), 2u32.into(), name.into(), v.into(), (dp2 - v).into()]);
        }
        if dominated {
            dom_ok += 1;
        }
    }
    checks.push(vec!["one_step_dp_equals_kg_exact".into(), instances.into(), kg_ok.into()]);
    checks.push(vec!["dp_dominates_heuristics".into(), instances.into(), dom_ok.into()]);
    Ok(vec![values, checks])
}
