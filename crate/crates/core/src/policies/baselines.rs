//! Non-adaptive and bandit-style comparison policies.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::{largest_remainder, UniformMode};
use crate::bayes::{Arm, ArmPosterior};
use crate::error::{Error, Result};
use crate::rng::TieBreakRng;
use crate::trial::{Allocation, StateMatrix};

/// Uniform randomization over all (subgroup, arm) cells.
pub fn uniform_action(subgroup_count: usize, cohort_size: u64, mode: UniformMode, rng: &mut TieBreakRng) -> Result<Allocation> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    if subgroup_count == 0 {
        return Err(Error::Domain("uniform allocation needs at least one subgroup"));
    }
    let cells = 2 * subgroup_count;
    let counts: Vec<u64> = match mode {
        UniformMode::Multinomial => {
            let mut c = vec![0u64; cells];
            for _ in 0..cohort_size {
                c[rng.random_range(0..cells)] += 1;
            }
            c
        }
        UniformMode::Quota => largest_remainder(&vec![1.0; cells], cohort_size, rng),
    };
    Ok(Allocation::from_counts(counts.chunks(2).map(|c| [c[0], c[1]]).collect()))
}

/// Equal recruitment per subgroup, remainder by seeded lottery.
fn subgroup_quotas(subgroup_count: usize, cohort_size: u64, rng: &mut TieBreakRng) -> Vec<u64> {
    largest_remainder(&vec![1.0; subgroup_count], cohort_size, rng)
}

fn posterior_beta(p: &ArmPosterior) -> Result<Beta<f64>> {
    let (a, b) = p.beta_params();
    Beta::new(a, b).map_err(|_| Error::Domain("invalid Beta posterior"))
}

/// Thompson sampling on the arm assignment; recruitment across subgroups is
/// uniform.
pub fn thompson_action(s: &StateMatrix, cohort_size: u64, rng: &mut TieBreakRng) -> Result<Allocation> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    let x_count = s.subgroup_count();
    let quotas = subgroup_quotas(x_count, cohort_size, rng);
    let mut u = Allocation::zeros(x_count);
    for (x, &quota) in quotas.iter().enumerate() {
        let control = posterior_beta(&s.get(x, Arm::Control))?;
        let treatment = posterior_beta(&s.get(x, Arm::Treatment))?;
        for _ in 0..quota {
            let pc: f64 = control.sample(rng);
            let pt: f64 = treatment.sample(rng);
            let arm = if pt > pc {
                Arm::Treatment
            } else if pc > pt {
                Arm::Control
            } else if rng.random::<bool>() {
                Arm::Treatment
            } else {
                Arm::Control
            };
            u.add(x, arm, 1);
        }
    }
    Ok(u)
}

/// Uniform recruitment; within a subgroup the arm split is proportional to
/// `posterior variance ^ exponent`.
pub fn dexfem_action(s: &StateMatrix, cohort_size: u64, exponent: f64, rng: &mut TieBreakRng) -> Result<Allocation> {
    if cohort_size == 0 {
        return Err(Error::EmptyCohort);
    }
    let x_count = s.subgroup_count();
    let quotas = subgroup_quotas(x_count, cohort_size, rng);
    let mut u = Allocation::zeros(x_count);
    for (x, &quota) in quotas.iter().enumerate() {
        let weights: Vec<f64> =
            Arm::BOTH.iter().map(|&arm| libm::pow(s.get(x, arm).posterior_variance(), exponent)).collect();
        let split = variance_split(&weights, quota, rng);
        u.add(x, Arm::Control, split[0]);
        u.add(x, Arm::Treatment, split[1]);
    }
    Ok(u)
}

pub(crate) fn variance_split(weights: &[f64], quota: u64, rng: &mut TieBreakRng) -> Vec<u64> {
    largest_remainder(weights, quota, rng)
}
