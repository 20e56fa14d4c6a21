//! Bayesian patient recruitment and allocation for randomized controlled
//! trials run in cohorts.
//!
//! Each (subgroup, arm) pair carries a Jeffreys-prior conjugate posterior.
//! A trial is a finite-horizon MDP whose terminal value is the negated
//! posterior expected total misclassification error; [`policies`] holds the
//! optimistic knowledge-gradient allocation rule together with baselines and
//! exact oracles for tiny instances, and [`sim`] runs synthetic trials.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bayes;
pub mod error;
pub mod metrics;
pub mod policies;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod special;
pub mod trial;

pub use bayes::{Arm, ArmPosterior, Bernoulli, ExponentialFamily, McEstimate, SubgroupPosterior};
pub use error::{Error, Result};
pub use metrics::MetricsRecord;
pub use policies::{PolicyKind, PolicySettings, UniformMode};
pub use rng::TieBreakRng;
pub use sim::{ConfidenceStatistic, Environment, StoppingRule, TrialConfig, TrialResult};
pub use trial::{
    classify, expected_total_error, g_loss, realized_errors, terminal_value, Allocation, CohortOutcome, LossParams,
    PseudoObservation, RealizedErrors, StateMatrix, SubgroupSet,
};
