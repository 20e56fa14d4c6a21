//! Seed derivation and per-cohort random streams.
//!
//! One master seed fans out into per-replicate seeds, then into per-cohort
//! substreams. Outcome sampling and tie-breaking use separate domains so that
//! changing a policy never perturbs the outcomes a replicate would observe.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Replicate = 0x5245_504c,
    Outcomes = 0x4f55_5443,
    TieBreak = 0x5449_4542,
    Prior = 0x5052_494f,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a parent seed, a domain tag and an index into a child seed.
pub fn derive_seed(parent: u64, domain: Domain, index: u64) -> u64 {
    splitmix(splitmix(parent ^ domain as u64).wrapping_add(index))
}

/// Seed of replicate `index` under `master`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, Domain::Replicate, index)
}

/// Deterministic stream for one (trial seed, cohort, domain).
#[derive(Debug, Clone)]
pub struct TieBreakRng(ChaCha8Rng);

impl TieBreakRng {
    pub fn for_cohort(trial_seed: u64, cohort: u64) -> Self {
        Self::in_domain(trial_seed, Domain::TieBreak, cohort)
    }

    pub fn in_domain(trial_seed: u64, domain: Domain, index: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, domain, index)))
    }

    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl RngCore for TieBreakRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
