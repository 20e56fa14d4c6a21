//! Allocation policies.
//!
//! Every policy maps `(state, cohort size, loss params, seeded stream)` to an
//! [`Allocation`] whose counts sum to the cohort size.

mod baselines;
mod exact;
mod rctkg;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use baselines::{dexfem_action, thompson_action, uniform_action};
pub use exact::{
    allocation_count, dp_optimal, enumerate_allocations, enumerated_policy_value, expected_terminal_value,
    kg_exact_action, kg_exact_best, DP_MAX_BUDGET, DP_MAX_SUBGROUPS, KG_EXACT_MAX_ACTIONS,
};
pub use rctkg::{
    compare_optimism_readings, rctkg_action, rctkg_action_counted, rctkg_action_incremental, OptimismComparison,
};

use crate::error::{Error, Result};
use crate::rng::TieBreakRng;
use crate::trial::{Allocation, LossParams, StateMatrix};

/// Values within this distance of the maximum count as tied.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PolicyKind {
    Rctkg,
    Uniform,
    Thompson,
    Dexfem,
    KgExact,
    DpOptimal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Rctkg,
        PolicyKind::Uniform,
        PolicyKind::Thompson,
        PolicyKind::Dexfem,
        PolicyKind::KgExact,
        PolicyKind::DpOptimal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Rctkg => "rctkg",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Thompson => "thompson",
            PolicyKind::Dexfem => "dexfem",
            PolicyKind::KgExact => "kg_exact",
            PolicyKind::DpOptimal => "dp_optimal",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        match s.to_ascii_lowercase().as_str() {
            "rctkg" | "rct-kg" | "rct_kg" => Some(PolicyKind::Rctkg),
            "uniform" | "ua" => Some(PolicyKind::Uniform),
            "thompson" | "ts" => Some(PolicyKind::Thompson),
            "dexfem" => Some(PolicyKind::Dexfem),
            "kg_exact" | "kg-exact" => Some(PolicyKind::KgExact),
            "dp_optimal" | "dp-optimal" | "dp" => Some(PolicyKind::DpOptimal),
            _ => None,
        }
    }

    /// Whether this kind is one of the exhaustive oracles.
    pub fn is_oracle(self) -> bool {
        matches!(self, PolicyKind::KgExact | PolicyKind::DpOptimal)
    }
}

/// How the uniform baseline spreads a cohort over cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum UniformMode {
    /// Each patient lands in a uniformly random (subgroup, arm) cell.
    #[default]
    Multinomial,
    /// Equal quotas per cell, remainder spread by seeded lottery.
    Quota,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicySettings {
    pub uniform_mode: UniformMode,
    /// Power applied to posterior variances by the DexFEM baseline.
    pub dexfem_exponent: f64,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self { uniform_mode: UniformMode::Multinomial, dexfem_exponent: 1.0 }
    }
}

/// Dispatches to the policy named by `kind`. `remaining_cohorts` is only used
/// by the dynamic-programming oracle.
pub fn choose_action(
    kind: PolicyKind,
    settings: &PolicySettings,
    s: &StateMatrix,
    cohort_size: u64,
    lp: &LossParams,
    remaining_cohorts: u32,
    rng: &mut TieBreakRng,
) -> Result<Allocation> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    match kind {
        PolicyKind::Rctkg => rctkg_action(s, cohort_size, lp, rng),
        PolicyKind::Uniform => uniform_action(s.subgroup_count(), cohort_size, settings.uniform_mode, rng),
        PolicyKind::Thompson => thompson_action(s, cohort_size, rng),
        PolicyKind::Dexfem => dexfem_action(s, cohort_size, settings.dexfem_exponent, rng),
        PolicyKind::KgExact => kg_exact_action(s, cohort_size, lp),
        PolicyKind::DpOptimal => dp_optimal(s, remaining_cohorts.max(1), cohort_size, lp).map(|(_, a)| a),
    }
}

/// Uniformly random index among the entries within [`TIE_TOL`] of the max.
pub(crate) fn argmax_random<R: Rng>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= best - TIE_TOL).collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}

/// Splits `total` proportionally to `weights` by the largest-remainder rule,
/// breaking remainder ties with `rng`. All-zero weights split evenly.
pub(crate) fn largest_remainder<R: Rng>(weights: &[f64], total: u64, rng: &mut R) -> Vec<u64> {
    let n = weights.len();
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 && sum.is_finite() {
        weights.iter().map(|w| total as f64 * w / sum).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut counts: Vec<u64> = shares.iter().map(|s| libm::floor(*s) as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut left = total.saturating_sub(assigned);
    // Random priority among equal remainders.
    let mut order: Vec<(f64, u64, usize)> =
        shares.iter().enumerate().map(|(i, s)| (s - libm::floor(*s), rng.next_u64(), i)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(b.1.cmp(&a.1)));
    let mut k = 0;
    while left > 0 {
        counts[order[k % n].2] += 1;
        left -= 1;
        k += 1;
    }
    counts
}
