//! Optimistic knowledge-gradient allocation.
//!
//! The cohort is built one patient at a time. For every candidate cell the
//! score is the larger of two optimistic value improvements: one where every
//! selected patient (including the candidate) resolves at the maximum outcome
//! and one where all resolve at the minimum outcome. The terminal value is
//! separable over subgroups, so a candidate in subgroup `x` only changes the
//! `x` term, and after an increment only the incremented subgroup's scores
//! need refreshing. A cohort of `M` over `X` subgroups therefore costs
//! `6X + 6(M - 1)` evaluations of `P_x`.

use alloc::vec;
use alloc::vec::Vec;

use super::argmax_random;
use super::exact::{expected_terminal_value, kg_exact_tractable};
use crate::bayes::{prob_effective_raw, Arm, ArmPosterior, SubgroupPosterior};
use crate::error::{Error, Result};
use crate::rng::TieBreakRng;
use crate::trial::{g_loss, Allocation, LossParams, StateMatrix};

/// Bernoulli outcome bounds: `G(z_min) = 0`, `G(z_max) = 1`.
const G_MIN: f64 = 0.0;
const G_MAX: f64 = 1.0;

struct Evaluator<'a> {
    lp: &'a LossParams,
    calls: usize,
}

impl Evaluator<'_> {
    fn loss(&mut self, sp: SubgroupPosterior) -> f64 {
        self.calls += 1;
        g_loss(prob_effective_raw(sp.control, sp.treatment, self.lp.tau), self.lp.lambda)
    }
}

/// Subgroup posterior after `counts` extra patients all resolve at `g`.
#[inline]
fn resolved(sp: &SubgroupPosterior, counts: [u64; 2], g: f64) -> SubgroupPosterior {
    let c = counts[0] as f64;
    let t = counts[1] as f64;
    SubgroupPosterior::new(sp.control.add(c * g, c), sp.treatment.add(t * g, t))
}

/// Scores `q(x, control)` and `q(x, treatment)` for subgroup `x` given the
/// patients already selected there.
fn subgroup_scores(ev: &mut Evaluator<'_>, sp: &SubgroupPosterior, selected: [u64; 2]) -> [f64; 2] {
    let base_max = ev.loss(resolved(sp, selected, G_MAX));
    let base_min = ev.loss(resolved(sp, selected, G_MIN));
    let mut q = [0.0; 2];
    for arm in Arm::BOTH {
        let mut grown = selected;
        grown[arm.index()] += 1;
        // V = -Σ g, so the improvement is the drop in this subgroup's loss.
        let v1 = base_max - ev.loss(resolved(sp, grown, G_MAX));
        let v2 = base_min - ev.loss(resolved(sp, grown, G_MIN));
        q[arm.index()] = v1.max(v2);
    }
    q
}

/// RCT-KG allocation of a cohort of `cohort_size` patients.
pub fn rctkg_action(s: &StateMatrix, cohort_size: u64, lp: &LossParams, rng: &mut TieBreakRng) -> Result<Allocation> {
    rctkg_action_counted(s, cohort_size, lp, rng).map(|(u, _)| u)
}

/// Like [`rctkg_action`], also returning the number of `P_x` evaluations.
pub fn rctkg_action_counted(
    s: &StateMatrix,
    cohort_size: u64,
    lp: &LossParams,
    rng: &mut TieBreakRng,
) -> Result<(Allocation, usize)> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    let x_count = s.subgroup_count();
    let mut ev = Evaluator { lp, calls: 0 };
    let mut u = Allocation::zeros(x_count);
    let mut q: Vec<f64> = vec![0.0; 2 * x_count];
    for x in 0..x_count {
        let scores = subgroup_scores(&mut ev, s.subgroup(x), [0, 0]);
        q[2 * x] = scores[0];
        q[2 * x + 1] = scores[1];
    }
    for step in 0..cohort_size {
        let cell = argmax_random(&q, rng);
        let (x, arm) = (cell / 2, if cell % 2 == 0 { Arm::Control } else { Arm::Treatment });
        u.add(x, arm, 1);
        if step + 1 < cohort_size {
            let scores = subgroup_scores(&mut ev, s.subgroup(x), u.counts()[x]);
            q[2 * x] = scores[0];
            q[2 * x + 1] = scores[1];
        }
    }
    Ok((u, ev.calls))
}

/// Alternative reading of the optimistic rule: each selected patient is
/// resolved at whichever extreme outcome scored it, and later candidates are
/// scored against that per-sample optimistic state.
pub fn rctkg_action_incremental(
    s: &StateMatrix,
    cohort_size: u64,
    lp: &LossParams,
    rng: &mut TieBreakRng,
) -> Result<Allocation> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    let x_count = s.subgroup_count();
    let mut ev = Evaluator { lp, calls: 0 };
    let mut optimistic: Vec<SubgroupPosterior> = s.subgroups().to_vec();
    let mut u = Allocation::zeros(x_count);
    for _ in 0..cohort_size {
        let mut q = vec![0.0; 2 * x_count];
        let mut up = vec![true; 2 * x_count];
        for x in 0..x_count {
            let base = ev.loss(optimistic[x]);
            for arm in Arm::BOTH {
                let mut hi = optimistic[x];
                let mut lo = optimistic[x];
                *hi.arm_mut(arm) = hi.arm(arm).add(G_MAX, 1.0);
                *lo.arm_mut(arm) = lo.arm(arm).add(G_MIN, 1.0);
                let v1 = base - ev.loss(hi);
                let v2 = base - ev.loss(lo);
                q[2 * x + arm.index()] = v1.max(v2);
                up[2 * x + arm.index()] = v1 >= v2;
            }
        }
        let cell = argmax_random(&q, rng);
        let (x, arm) = (cell / 2, if cell % 2 == 0 { Arm::Control } else { Arm::Treatment });
        u.add(x, arm, 1);
        let g = if up[cell] { G_MAX } else { G_MIN };
        let a: ArmPosterior = optimistic[x].arm(arm).add(g, 1.0);
        *optimistic[x].arm_mut(arm) = a;
    }
    Ok(u)
}

/// Side-by-side output of the whole-batch and per-sample optimism readings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimismComparison {
    pub whole_batch: Allocation,
    pub incremental: Allocation,
    /// Exact one-step expected terminal values, when the instance is small
    /// enough to enumerate outcomes.
    pub whole_batch_value: Option<f64>,
    pub incremental_value: Option<f64>,
}

/// Diagnostic comparing the two readings on one state. Makes no claim that
/// they agree.
pub fn compare_optimism_readings(
    s: &StateMatrix,
    cohort_size: u64,
    lp: &LossParams,
    seed: u64,
) -> Result<OptimismComparison> {
    let whole_batch = rctkg_action(s, cohort_size, lp, &mut TieBreakRng::from_seed(seed))?;
    let incremental = rctkg_action_incremental(s, cohort_size, lp, &mut TieBreakRng::from_seed(seed))?;
    let (whole_batch_value, incremental_value) = if kg_exact_tractable(s.subgroup_count(), cohort_size) {
        (Some(expected_terminal_value(s, &whole_batch, lp)), Some(expected_terminal_value(s, &incremental, lp)))
    } else {
        (None, None)
    };
    Ok(OptimismComparison { whole_batch, incremental, whole_batch_value, incremental_value })
}
