//! Replicated trials with serial-equivalent parallel execution.

use rayon::prelude::*;
use rctkg_core::metrics::MetricsAccumulator;
use rctkg_core::rng::replicate_seed;
use rctkg_core::sim::{run_trial, Environment, TrialConfig, TrialResult};
use rctkg_core::{expected_total_error, MetricsRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Runs replicate `index` of `cfg`, whose trial seed is derived from the
/// master seed in `cfg.seed`.
pub fn run_replicate(env: &Environment, cfg: &TrialConfig, index: u64) -> Result<TrialResult> {
    let mut c = cfg.clone();
    c.seed = replicate_seed(cfg.seed, index);
    run_trial(env, &c)
}

/// Maps every replicate through `f`, returning the values in replicate order.
pub fn replicate_map<T, F>(env: &Environment, cfg: &TrialConfig, replicates: u64, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, TrialResult) -> T + Sync + Send,
{
    cfg.validate()?;
    let one = |i: u64| run_replicate(env, cfg, i).map(|r| f(i, r));
    match exec {
        Execution::Serial => (0..replicates).map(one).collect(),
        Execution::Parallel => (0..replicates).into_par_iter().map(one).collect(),
    }
}

/// Aggregate metrics plus per-replicate summaries used for paired comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicated {
    pub metrics: MetricsRecord,
    /// Misclassified fraction `(e1 + e2) / X` per replicate.
    pub error_rate: Vec<f64>,
    /// Posterior expected total error at the end of each replicate.
    pub expected_error: Vec<f64>,
    /// Cohort-1 allocation of each replicate, if any cohort ran.
    pub first_cohort: Vec<Option<Vec<[u64; 2]>>>,
}

impl Replicated {
    pub fn expected_error_mean_se(&self) -> (f64, f64) {
        mean_se(&self.expected_error)
    }
}

struct Summary {
    result: TrialResult,
    expected_error: f64,
}

/// Runs `replicates` independent trials and aggregates them.
pub fn replicate(env: &Environment, cfg: &TrialConfig, replicates: u64, exec: Execution) -> Result<Replicated> {
    let x = cfg.subgroup_count;
    let lp = cfg.loss;
    let runs = replicate_map(env, cfg, replicates, exec, |_, r| {
        let expected_error = expected_total_error(&r.final_state, &lp);
        Summary { result: r, expected_error }
    })?;
    let mut acc = MetricsAccumulator::new(x, lp.lambda);
    let mut error_rate = Vec::with_capacity(runs.len());
    let mut expected_error = Vec::with_capacity(runs.len());
    let mut first_cohort = Vec::with_capacity(runs.len());
    for s in &runs {
        acc.add(&s.result);
        error_rate.push((s.result.errors.type_one + s.result.errors.type_two) as f64 / x as f64);
        expected_error.push(s.expected_error);
        first_cohort.push(s.result.log.first().map(|c| c.allocation.counts().to_vec()));
    }
    Ok(Replicated { metrics: acc.finish(), error_rate, expected_error, first_cohort })
}

/// Mean and standard error (sample std / sqrt(n)).
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Paired comparison of `a - b`: mean difference and its standard error.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_se(&d)
}
