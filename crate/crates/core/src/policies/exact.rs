//! Exhaustive oracles for tiny instances: the exact one-step knowledge
//! gradient and finite-horizon dynamic programming.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::bayes::{prob_effective_raw, Arm};
use crate::error::{Error, Result};
use crate::rng::TieBreakRng;
use crate::trial::{g_loss, terminal_value, Allocation, CohortOutcome, LossParams, StateMatrix};

/// Largest action set the exact knowledge gradient will enumerate.
pub const KG_EXACT_MAX_ACTIONS: u64 = 10_000;
pub const DP_MAX_SUBGROUPS: usize = 2;
/// Largest `K * M` the dynamic program accepts.
pub const DP_MAX_BUDGET: u64 = 8;

/// Improvements smaller than this do not displace an earlier maximizer.
const LEX_TOL: f64 = 1e-12;

/// `|A| = C(M + 2X - 1, 2X - 1)`, saturating at `u64::MAX`.
pub fn allocation_count(subgroup_count: usize, cohort_size: u64) -> u64 {
    let k = 2 * subgroup_count as u128 - 1;
    let n = cohort_size as u128 + k;
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc * (n - k + i) / i;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

pub(crate) fn kg_exact_tractable(subgroup_count: usize, cohort_size: u64) -> bool {
    subgroup_count > 0 && allocation_count(subgroup_count, cohort_size) <= KG_EXACT_MAX_ACTIONS
}

/// Every allocation of `cohort_size` patients over the `2X` cells, in
/// lexicographic order of the canonical cell vector.
pub fn enumerate_allocations(subgroup_count: usize, cohort_size: u64) -> Vec<Allocation> {
    let cells = 2 * subgroup_count;
    let mut out = Vec::new();
    let mut current = vec![0u64; cells];
    fill(&mut current, 0, cohort_size, &mut out);
    out
}

fn fill(current: &mut Vec<u64>, cell: usize, left: u64, out: &mut Vec<Allocation>) {
    if cell + 1 == current.len() {
        current[cell] = left;
        out.push(Allocation::from_counts(current.chunks(2).map(|c| [c[0], c[1]]).collect()));
        return;
    }
    for v in 0..=left {
        current[cell] = v;
        fill(current, cell + 1, left - v, out);
    }
}

/// Exact posterior-predictive expectation of the terminal value after
/// allocating `u` and observing the outcomes. Uses separability over
/// subgroups: each subgroup term only depends on its own two cells.
pub fn expected_terminal_value(s: &StateMatrix, u: &Allocation, lp: &LossParams) -> f64 {
    let mut total = 0.0;
    for x in 0..s.subgroup_count() {
        let sp = s.subgroup(x);
        let (nc, nt) = (u.get(x, Arm::Control), u.get(x, Arm::Treatment));
        let pc: Vec<f64> = (0..=nc).map(|w| sp.control.predictive_pmf(nc, w)).collect();
        let pt: Vec<f64> = (0..=nt).map(|w| sp.treatment.predictive_pmf(nt, w)).collect();
        let mut term = 0.0;
        for (wc, &a) in pc.iter().enumerate() {
            let control = sp.control.add(wc as f64, nc as f64);
            for (wt, &b) in pt.iter().enumerate() {
                let treatment = sp.treatment.add(wt as f64, nt as f64);
                term += a * b * g_loss(prob_effective_raw(control, treatment, lp.tau), lp.lambda);
            }
        }
        total -= term;
    }
    total
}

/// Exact knowledge-gradient action and its expected terminal value.
pub fn kg_exact_best(s: &StateMatrix, cohort_size: u64, lp: &LossParams) -> Result<(Allocation, f64)> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    let size = allocation_count(s.subgroup_count(), cohort_size);
    if size > KG_EXACT_MAX_ACTIONS {
        return Err(Error::Intractable { what: "exact knowledge gradient", size, bound: KG_EXACT_MAX_ACTIONS });
    }
    let mut best: Option<(Allocation, f64)> = None;
    for u in enumerate_allocations(s.subgroup_count(), cohort_size) {
        let v = expected_terminal_value(s, &u, lp);
        if best.as_ref().map_or(true, |(_, b)| v > *b + LEX_TOL) {
            best = Some((u, v));
        }
    }
    Ok(best.expect("at least one allocation"))
}

pub fn kg_exact_action(s: &StateMatrix, cohort_size: u64, lp: &LossParams) -> Result<Allocation> {
    kg_exact_best(s, cohort_size, lp).map(|(u, _)| u)
}

fn check_dp_bounds(s: &StateMatrix, cohorts: u32, cohort_size: u64) -> Result<()> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    if s.subgroup_count() > DP_MAX_SUBGROUPS {
        return Err(Error::Intractable {
            what: "dynamic program subgroups",
            size: s.subgroup_count() as u64,
            bound: DP_MAX_SUBGROUPS as u64,
        });
    }
    let budget = cohorts as u64 * cohort_size;
    if budget > DP_MAX_BUDGET {
        return Err(Error::Intractable { what: "dynamic program budget", size: budget, bound: DP_MAX_BUDGET });
    }
    Ok(())
}

/// Joint outcome vectors for `u` with their posterior-predictive
/// probabilities, enumerated cell by cell.
fn joint_outcomes(s: &StateMatrix, u: &Allocation) -> Vec<(CohortOutcome, f64)> {
    let x_count = s.subgroup_count();
    let mut out = vec![(CohortOutcome::zeros(x_count), 1.0)];
    for x in 0..x_count {
        for arm in Arm::BOTH {
            let n = u.get(x, arm);
            if n == 0 {
                continue;
            }
            let post = s.get(x, arm);
            let pmf: Vec<f64> = (0..=n).map(|w| post.predictive_pmf(n, w)).collect();
            let mut next = Vec::with_capacity(out.len() * pmf.len());
            for (w_vec, p) in &out {
                for (w, &q) in pmf.iter().enumerate() {
                    let mut w2 = w_vec.clone();
                    w2.set(x, arm, w as u64);
                    next.push((w2, p * q));
                }
            }
            out = next;
        }
    }
    out
}

type MemoKey = (Vec<u64>, u32);

fn state_key(s: &StateMatrix, steps: u32) -> MemoKey {
    let bits = s.quadruples().iter().flat_map(|&(_, _, a, b)| [a.to_bits(), b.to_bits()]).collect();
    (bits, steps)
}

struct Dp<'a> {
    lp: &'a LossParams,
    cohort_size: u64,
    actions: Vec<Allocation>,
    memo: BTreeMap<MemoKey, f64>,
}

impl Dp<'_> {
    fn q_value(&mut self, s: &StateMatrix, u: &Allocation, steps: u32) -> f64 {
        let mut acc = 0.0;
        for (w, p) in joint_outcomes(s, u) {
            let next = s.transition(u, &w).expect("enumerated outcomes are consistent");
            acc += p * self.value(&next, steps - 1);
        }
        acc
    }

    fn value(&mut self, s: &StateMatrix, steps: u32) -> f64 {
        if steps == 0 {
            return terminal_value(s, self.lp);
        }
        let key = state_key(s, steps);
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.actions.len() {
            let u = self.actions[i].clone();
            best = best.max(self.q_value(s, &u, steps));
        }
        self.memo.insert(key, best);
        best
    }
}

/// Bayes-optimal expected terminal value of a `cohorts`-step trial with fixed
/// cohort size, together with an optimal first action (earliest in
/// lexicographic order among maximizers).
pub fn dp_optimal(s: &StateMatrix, cohorts: u32, cohort_size: u64, lp: &LossParams) -> Result<(f64, Allocation)> {
    check_dp_bounds(s, cohorts, cohort_size)?;
    if cohorts == 0 {
        return Err(Error::Domain("dynamic program needs at least one cohort"));
    }
    let mut dp = Dp {
        lp,
        cohort_size,
        actions: enumerate_allocations(s.subgroup_count(), cohort_size),
        memo: BTreeMap::new(),
    };
    debug_assert_eq!(dp.actions.len() as u64, allocation_count(s.subgroup_count(), dp.cohort_size));
    let mut best: Option<(f64, Allocation)> = None;
    for i in 0..dp.actions.len() {
        let u = dp.actions[i].clone();
        let v = dp.q_value(s, &u, cohorts);
        if best.as_ref().map_or(true, |(b, _)| v > *b + LEX_TOL) {
            best = Some((v, u));
        }
    }
    Ok(best.expect("at least one allocation"))
}

/// Exact expected terminal value of running `policy` for `cohorts` steps,
/// enumerating every outcome path. The policy's stream for cohort `k` is
/// `TieBreakRng::for_cohort(seed, k)`, so randomized policies are evaluated
/// for one fixed seed.
pub fn enumerated_policy_value<F>(
    s: &StateMatrix,
    cohorts: u32,
    cohort_size: u64,
    lp: &LossParams,
    seed: u64,
    mut policy: F,
) -> Result<f64>
where
    F: FnMut(&StateMatrix, u64, &mut TieBreakRng) -> Result<Allocation>,
{
    check_dp_bounds(s, cohorts, cohort_size)?;
    walk(s, 0, cohorts, cohort_size, lp, seed, &mut policy)
}

fn walk<F>(s: &StateMatrix, k: u32, cohorts: u32, m: u64, lp: &LossParams, seed: u64, policy: &mut F) -> Result<f64>
where
    F: FnMut(&StateMatrix, u64, &mut TieBreakRng) -> Result<Allocation>,
{
    if k == cohorts {
        return Ok(terminal_value(s, lp));
    }
    let u = policy(s, m, &mut TieBreakRng::for_cohort(seed, k as u64))?;
    if u.cohort_size() != m {
        return Err(Error::Domain("policy violated the cohort size"));
    }
    let mut acc = 0.0;
    for (w, p) in joint_outcomes(s, &u) {
        acc += p * walk(&s.transition(&u, &w)?, k + 1, cohorts, m, lp, seed, policy)?;
    }
    Ok(acc)
}
