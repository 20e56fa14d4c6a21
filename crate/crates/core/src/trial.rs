//! Trial state, actions, transitions and error accounting.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::bayes::{prob_effective_raw, Arm, ArmPosterior, SubgroupPosterior};
use crate::error::{Error, Result};

/// Set of subgroup indices.
pub type SubgroupSet = BTreeSet<usize>;

/// Posterior hyper-parameters for every (subgroup, arm) pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateMatrix {
    subgroups: Vec<SubgroupPosterior>,
}

impl StateMatrix {
    /// Fresh Jeffreys state for `subgroup_count` subgroups.
    pub fn fresh(subgroup_count: usize) -> Self {
        Self { subgroups: vec![SubgroupPosterior::default(); subgroup_count] }
    }

    pub fn from_subgroups(subgroups: Vec<SubgroupPosterior>) -> Result<Self> {
        if subgroups.is_empty() {
            return Err(Error::Domain("a state needs at least one subgroup"));
        }
        for sp in &subgroups {
            ArmPosterior::new(sp.control.stat, sp.control.count)?;
            ArmPosterior::new(sp.treatment.stat, sp.treatment.count)?;
        }
        Ok(Self { subgroups })
    }

    pub fn subgroup_count(&self) -> usize {
        self.subgroups.len()
    }

    pub fn subgroup(&self, x: usize) -> &SubgroupPosterior {
        &self.subgroups[x]
    }

    pub fn subgroups(&self) -> &[SubgroupPosterior] {
        &self.subgroups
    }

    pub fn get(&self, x: usize, arm: Arm) -> ArmPosterior {
        *self.subgroups[x].arm(arm)
    }

    pub(crate) fn set(&mut self, x: usize, arm: Arm, value: ArmPosterior) {
        *self.subgroups[x].arm_mut(arm) = value;
    }

    /// Canonical ordered `(x, arm, s0, s1)` listing.
    pub fn quadruples(&self) -> Vec<(usize, Arm, f64, f64)> {
        let mut out = Vec::with_capacity(2 * self.subgroups.len());
        for (x, sp) in self.subgroups.iter().enumerate() {
            for arm in Arm::BOTH {
                let p = sp.arm(arm);
                out.push((x, arm, p.stat, p.count));
            }
        }
        out
    }

    /// Inverse of [`quadruples`](Self::quadruples). Requires exactly one entry
    /// for every (subgroup, arm) pair in canonical order.
    pub fn from_quadruples(entries: &[(usize, Arm, f64, f64)]) -> Result<Self> {
        if entries.is_empty() || entries.len() % 2 != 0 {
            return Err(Error::Domain("state listing must hold two entries per subgroup"));
        }
        let mut subgroups = Vec::with_capacity(entries.len() / 2);
        for (i, pair) in entries.chunks(2).enumerate() {
            let (x0, a0, s00, s01) = pair[0];
            let (x1, a1, s10, s11) = pair[1];
            if x0 != i || x1 != i || a0 != Arm::Control || a1 != Arm::Treatment {
                return Err(Error::Domain("state listing is not in canonical (subgroup, arm) order"));
            }
            subgroups.push(SubgroupPosterior::new(ArmPosterior::new(s00, s01)?, ArmPosterior::new(s10, s11)?));
        }
        Ok(Self { subgroups })
    }

    /// `P_x` for every subgroup.
    pub fn prob_effective_all(&self, tau: f64) -> Vec<f64> {
        self.subgroups.iter().map(|sp| prob_effective_raw(sp.control, sp.treatment, tau)).collect()
    }

    /// Applies a cohort's allocation and observed outcomes.
    pub fn transition(&self, u: &Allocation, w: &CohortOutcome) -> Result<StateMatrix> {
        let x_count = self.subgroup_count();
        if u.subgroup_count() != x_count {
            return Err(Error::ShapeMismatch { expected: x_count, actual: u.subgroup_count() });
        }
        w.check_against(u)?;
        let mut next = self.clone();
        for x in 0..x_count {
            for arm in Arm::BOTH {
                let n = u.get(x, arm);
                if n == 0 {
                    continue;
                }
                let p = next.get(x, arm).add(w.get(x, arm) as f64, n as f64);
                next.set(x, arm, p);
            }
        }
        Ok(next)
    }

    /// Folds a whole list of pseudo-observations into the state.
    pub fn with_pseudo_observations(mut self, obs: &[PseudoObservation]) -> Result<StateMatrix> {
        for o in obs {
            if o.subgroup >= self.subgroup_count() {
                return Err(Error::ShapeMismatch { expected: self.subgroup_count(), actual: o.subgroup + 1 });
            }
            let p = self.get(o.subgroup, o.arm).update(o.successes, o.samples)?;
            self.set(o.subgroup, o.arm, p);
        }
        Ok(self)
    }
}

/// Prior information expressed as already-observed patients.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoObservation {
    pub subgroup: usize,
    pub arm: Arm,
    pub successes: f64,
    pub samples: f64,
}

/// Patient counts `u(x, y)` for one cohort.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Allocation {
    counts: Vec<[u64; 2]>,
}

impl Allocation {
    pub fn zeros(subgroup_count: usize) -> Self {
        Self { counts: vec![[0, 0]; subgroup_count] }
    }

    pub fn from_counts(counts: Vec<[u64; 2]>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[[u64; 2]] {
        &self.counts
    }

    pub fn subgroup_count(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, x: usize, arm: Arm) -> u64 {
        self.counts[x][arm.index()]
    }

    pub fn add(&mut self, x: usize, arm: Arm, n: u64) {
        self.counts[x][arm.index()] += n;
    }

    pub fn subgroup_total(&self, x: usize) -> u64 {
        self.counts[x][0] + self.counts[x][1]
    }

    /// Cohort size `M`.
    pub fn cohort_size(&self) -> u64 {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    /// Relabels subgroups: subgroup `x` of `self` becomes `perm[x]`.
    pub fn permuted(&self, perm: &[usize]) -> Allocation {
        let mut counts = vec![[0, 0]; self.counts.len()];
        for (x, c) in self.counts.iter().enumerate() {
            counts[perm[x]] = *c;
        }
        Allocation { counts }
    }
}

/// Observed success counts `W(x, y)` for one cohort.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortOutcome {
    successes: Vec<[u64; 2]>,
}

impl CohortOutcome {
    pub fn zeros(subgroup_count: usize) -> Self {
        Self { successes: vec![[0, 0]; subgroup_count] }
    }

    pub fn from_counts(successes: Vec<[u64; 2]>) -> Self {
        Self { successes }
    }

    pub fn counts(&self) -> &[[u64; 2]] {
        &self.successes
    }

    pub fn get(&self, x: usize, arm: Arm) -> u64 {
        self.successes[x][arm.index()]
    }

    pub fn set(&mut self, x: usize, arm: Arm, w: u64) {
        self.successes[x][arm.index()] = w;
    }

    /// Checks `0 <= W(x, y) <= u(x, y)` cell by cell.
    pub fn check_against(&self, u: &Allocation) -> Result<()> {
        if self.successes.len() != u.subgroup_count() {
            return Err(Error::ShapeMismatch { expected: u.subgroup_count(), actual: self.successes.len() });
        }
        for x in 0..self.successes.len() {
            for arm in Arm::BOTH {
                let (w, n) = (self.get(x, arm), u.get(x, arm));
                if w > n {
                    return Err(Error::OutcomeExceedsAllocation {
                        subgroup: x,
                        arm: arm.as_str(),
                        successes: w,
                        enrolled: n,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Error weighting `λ` and effectiveness threshold `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParams {
    pub lambda: f64,
    pub tau: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { lambda: 0.5, tau: 0.0 }
    }
}

impl LossParams {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        let lp = Self { lambda, tau };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidLambda(self.lambda));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidThreshold(self.tau));
        }
        Ok(())
    }
}

/// Posterior expected misclassification loss of one subgroup whose
/// probability of effectiveness is `p`, under the Bayes classification rule.
///
/// Declaring the subgroup effective (`p >= 1 - λ`) risks a type-II error with
/// probability `1 - p`, weighted `1 - λ`; declaring it ineffective risks a
/// type-I error with probability `p`, weighted `λ`. The two branches meet at
/// `p = 1 - λ` with value `λ(1 - λ)`.
#[inline]
pub fn g_loss(p: f64, lambda: f64) -> f64 {
    if p >= 1.0 - lambda {
        (1.0 - lambda) * (1.0 - p)
    } else {
        lambda * p
    }
}

/// Posterior expected total error `Σ_x g(P_x)`.
pub fn expected_total_error(s: &StateMatrix, lp: &LossParams) -> f64 {
    s.subgroups().iter().map(|sp| g_loss(prob_effective_raw(sp.control, sp.treatment, lp.tau), lp.lambda)).sum()
}

/// Terminal value `V^K(s)`: the negated posterior expected total error.
pub fn terminal_value(s: &StateMatrix, lp: &LossParams) -> f64 {
    -expected_total_error(s, lp)
}

/// Subgroups classified effective: `{x : P_x >= 1 - λ}`.
pub fn classify(s: &StateMatrix, lp: &LossParams) -> SubgroupSet {
    classify_probs(&s.prob_effective_all(lp.tau), lp.lambda)
}

pub fn classify_probs(probs: &[f64], lambda: f64) -> SubgroupSet {
    probs.iter().enumerate().filter(|(_, &p)| p >= 1.0 - lambda).map(|(x, _)| x).collect()
}

/// Realized errors of an estimated positive set against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RealizedErrors {
    /// Truly effective subgroups estimated ineffective.
    pub type_one: u32,
    /// Truly ineffective subgroups estimated effective.
    pub type_two: u32,
    /// `λ e1 + (1 - λ) e2`.
    pub total: f64,
}

pub fn realized_errors(est: &SubgroupSet, truth: &SubgroupSet, lambda: f64) -> RealizedErrors {
    let type_one = truth.difference(est).count() as u32;
    let type_two = est.difference(truth).count() as u32;
    RealizedErrors { type_one, type_two, total: lambda * type_one as f64 + (1.0 - lambda) * type_two as f64 }
}
