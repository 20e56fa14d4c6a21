use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("impossible observation: statistic {statistic} is outside [{min}, {max}] for {samples} samples")]
    ImpossibleObservation { statistic: f64, samples: f64, min: f64, max: f64 },

    #[error("sample count must be a finite nonnegative number, got {0}")]
    NegativeCount(f64),

    #[error("effectiveness threshold tau must be finite and nonnegative, got {0}")]
    InvalidThreshold(f64),

    #[error("error weight lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),

    #[error("cohort size must be at least 1")]
    EmptyCohort,

    #[error("shape mismatch: expected {expected} subgroups, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("subgroup {subgroup} {arm}: {successes} successes exceed {enrolled} enrolled")]
    OutcomeExceedsAllocation { subgroup: usize, arm: &'static str, successes: u64, enrolled: u64 },

    #[error("{what}: instance size {size} exceeds the tractability bound {bound}")]
    Intractable { what: &'static str, size: u64, bound: u64 },

    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}
