//! Synthetic Bernoulli environments and single-trial execution.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Binomial, Distribution};

use crate::bayes::Arm;
use crate::error::{Error, Result};
use crate::policies::{choose_action, PolicyKind, PolicySettings, DP_MAX_BUDGET, DP_MAX_SUBGROUPS};
use crate::rng::{Domain, TieBreakRng};
use crate::trial::{
    classify_probs, g_loss, realized_errors, Allocation, CohortOutcome, LossParams, PseudoObservation,
    RealizedErrors, StateMatrix, SubgroupSet,
};

/// True success probabilities per (subgroup, arm).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Environment {
    pub control: Vec<f64>,
    pub treatment: Vec<f64>,
}

impl Environment {
    pub fn new(control: Vec<f64>, treatment: Vec<f64>) -> Result<Self> {
        let env = Self { control, treatment };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if self.control.is_empty() || self.control.len() != self.treatment.len() {
            return Err(Error::InvalidConfig {
                field: "environment",
                reason: format!(
                    "control and treatment need the same nonzero length (got {} and {})",
                    self.control.len(),
                    self.treatment.len()
                ),
            });
        }
        for &p in self.control.iter().chain(&self.treatment) {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig {
                    field: "environment",
                    reason: format!("success probabilities must lie in (0, 1), got {p}"),
                });
            }
        }
        Ok(())
    }

    pub fn subgroup_count(&self) -> usize {
        self.control.len()
    }

    pub fn probability(&self, x: usize, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.control[x],
            Arm::Treatment => self.treatment[x],
        }
    }

    /// `{x : (μ1 - μ0) / μ0 >= τ}`.
    pub fn truly_effective(&self, tau: f64) -> SubgroupSet {
        (0..self.subgroup_count())
            .filter(|&x| (self.treatment[x] - self.control[x]) / self.control[x] >= tau)
            .collect()
    }
}

/// Per-subgroup quantity averaged by the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConfidenceStatistic {
    /// Posterior probability that the subgroup's label is wrong: `1 - P_x`
    /// when classified effective, `P_x` otherwise.
    #[default]
    Misclassification,
    /// The λ-weighted loss `g(P_x)`.
    WeightedLoss,
}

impl ConfidenceStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceStatistic::Misclassification => "misclassification",
            ConfidenceStatistic::WeightedLoss => "weighted_loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "misclassification" => Some(ConfidenceStatistic::Misclassification),
            "weighted_loss" => Some(ConfidenceStatistic::WeightedLoss),
            _ => None,
        }
    }

    pub fn value(self, p: f64, lambda: f64) -> f64 {
        match self {
            ConfidenceStatistic::Misclassification => {
                if p >= 1.0 - lambda {
                    1.0 - p
                } else {
                    p
                }
            }
            ConfidenceStatistic::WeightedLoss => g_loss(p, lambda),
        }
    }
}

/// Stop once the subgroup average of `statistic` drops below `1 - beta`, or
/// after `max_cohorts`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StoppingRule {
    pub beta: f64,
    pub max_cohorts: u32,
    #[cfg_attr(feature = "serde", serde(default))]
    pub statistic: ConfidenceStatistic,
}

impl StoppingRule {
    pub fn new(beta: f64, max_cohorts: u32) -> Self {
        Self { beta, max_cohorts, statistic: ConfidenceStatistic::default() }
    }

    pub fn satisfied(&self, probs: &[f64], lambda: f64) -> bool {
        let avg = probs.iter().map(|&p| self.statistic.value(p, lambda)).sum::<f64>() / probs.len() as f64;
        avg < 1.0 - self.beta
    }
}

/// Pilot samples drawn from the environment before the trial starts and
/// folded into the prior; they do not count against the budget.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PilotPrior {
    pub per_cell_samples: u64,
    pub subgroups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialConfig {
    pub subgroup_count: usize,
    /// Total patient budget `N`; equals `cohorts * cohort_size` in
    /// fixed-horizon mode.
    pub budget: u64,
    pub cohorts: u32,
    pub cohort_size: u64,
    pub loss: LossParams,
    pub policy: PolicyKind,
    pub settings: PolicySettings,
    pub seed: u64,
    pub prior: Vec<PseudoObservation>,
    pub pilot: Option<PilotPrior>,
    pub stopping: Option<StoppingRule>,
}

impl TrialConfig {
    /// Fixed-horizon configuration with default loss parameters.
    pub fn fixed(subgroup_count: usize, cohorts: u32, cohort_size: u64, policy: PolicyKind, seed: u64) -> Self {
        Self {
            subgroup_count,
            budget: cohorts as u64 * cohort_size,
            cohorts,
            cohort_size,
            loss: LossParams::default(),
            policy,
            settings: PolicySettings::default(),
            seed,
            prior: Vec::new(),
            pilot: None,
            stopping: None,
        }
    }

    pub fn with_stopping(mut self, beta: f64, max_cohorts: u32) -> Self {
        self.stopping = Some(StoppingRule::new(beta, max_cohorts));
        self.cohorts = max_cohorts;
        self.budget = max_cohorts as u64 * self.cohort_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: alloc::string::String| Err(Error::InvalidConfig { field, reason });
        if self.subgroup_count == 0 {
            return bad("subgroups", "must be at least 1".into());
        }
        self.loss.validate().or_else(|e| bad("loss", format!("{e}")))?;
        if self.cohort_size == 0 {
            return bad("cohort_size", "must be at least 1".into());
        }
        match self.stopping {
            None => {
                if self.budget != self.cohorts as u64 * self.cohort_size {
                    return bad(
                        "budget",
                        format!(
                            "budget ({}) must equal cohorts ({}) x cohort_size ({})",
                            self.budget, self.cohorts, self.cohort_size
                        ),
                    );
                }
            }
            Some(rule) => {
                if !(rule.beta > 0.5 && rule.beta < 1.0) {
                    return bad("stopping.beta", format!("must lie in (0.5, 1), got {}", rule.beta));
                }
                if rule.max_cohorts == 0 {
                    return bad("stopping.max_cohorts", "must be at least 1".into());
                }
            }
        }
        for o in &self.prior {
            if o.subgroup >= self.subgroup_count {
                return bad("prior", format!("subgroup {} out of range", o.subgroup));
            }
            if !(o.samples >= 0.0 && o.successes >= 0.0 && o.successes <= o.samples) {
                return bad("prior", format!("need 0 <= successes <= samples, got {}/{}", o.successes, o.samples));
            }
        }
        if let Some(p) = &self.pilot {
            if let Some(x) = p.subgroups.iter().find(|&&x| x >= self.subgroup_count) {
                return bad("pilot.subgroups", format!("subgroup {x} out of range"));
            }
        }
        if self.policy == PolicyKind::DpOptimal {
            let horizon = self.stopping.map_or(self.cohorts, |r| r.max_cohorts) as u64 * self.cohort_size;
            if self.subgroup_count > DP_MAX_SUBGROUPS || horizon > DP_MAX_BUDGET {
                return bad("policy", "dp_optimal is limited to X <= 2 and K*M <= 8".into());
            }
        }
        if self.policy == PolicyKind::KgExact
            && crate::policies::allocation_count(self.subgroup_count, self.cohort_size)
                > crate::policies::KG_EXACT_MAX_ACTIONS
        {
            return bad("policy", "kg_exact action set exceeds 10^4 allocations".into());
        }
        Ok(())
    }

    /// Starting state: Jeffreys prior plus explicit pseudo-observations.
    pub fn initial_state(&self) -> Result<StateMatrix> {
        StateMatrix::fresh(self.subgroup_count).with_pseudo_observations(&self.prior)
    }
}

/// Draws `Binomial(per_cell_samples, θ)` pilot outcomes for both arms of each
/// selected subgroup.
pub fn build_informative_prior(
    env: &Environment,
    per_cell_samples: u64,
    subgroups: &[usize],
    seed: u64,
) -> Result<Vec<PseudoObservation>> {
    let mut rng = TieBreakRng::in_domain(seed, Domain::Prior, 0);
    let mut out = Vec::new();
    if per_cell_samples == 0 {
        return Ok(out);
    }
    for &x in subgroups {
        if x >= env.subgroup_count() {
            return Err(Error::ShapeMismatch { expected: env.subgroup_count(), actual: x + 1 });
        }
        for arm in Arm::BOTH {
            let w = sample_binomial(per_cell_samples, env.probability(x, arm), &mut rng)?;
            out.push(PseudoObservation { subgroup: x, arm, successes: w as f64, samples: per_cell_samples as f64 });
        }
    }
    Ok(out)
}

fn sample_binomial(n: u64, p: f64, rng: &mut TieBreakRng) -> Result<u64> {
    if n == 0 {
        return Ok(0);
    }
    let d = Binomial::new(n, p).map_err(|_| Error::Domain("invalid binomial parameters"))?;
    Ok(d.sample(rng))
}

/// Samples `W(x, y) ~ Binomial(u(x, y), θ_{x,y})` for one cohort.
pub fn sample_outcomes(env: &Environment, u: &Allocation, rng: &mut TieBreakRng) -> Result<CohortOutcome> {
    let mut w = CohortOutcome::zeros(u.subgroup_count());
    for x in 0..u.subgroup_count() {
        for arm in Arm::BOTH {
            w.set(x, arm, sample_binomial(u.get(x, arm), env.probability(x, arm), rng)?);
        }
    }
    Ok(w)
}

/// One executed cohort.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortRecord {
    pub allocation: Allocation,
    pub outcome: CohortOutcome,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialResult {
    pub final_state: StateMatrix,
    pub log: Vec<CohortRecord>,
    pub estimated: SubgroupSet,
    pub truth: SubgroupSet,
    pub errors: RealizedErrors,
    /// `P_x` after each cohort; entry 0 is the starting state.
    pub prob_history: Vec<Vec<f64>>,
    pub cohorts_used: u32,
    pub recruitment: Vec<[u64; 2]>,
}

impl TrialResult {
    /// Whether subgroup `x` was classified in agreement with the truth.
    pub fn correct(&self, x: usize) -> bool {
        self.estimated.contains(&x) == self.truth.contains(&x)
    }

    /// Classification correctness per subgroup after cohort `k`.
    pub fn correct_at(&self, k: usize, lambda: f64) -> Vec<bool> {
        let est = classify_probs(&self.prob_history[k], lambda);
        (0..self.recruitment.len()).map(|x| est.contains(&x) == self.truth.contains(&x)).collect()
    }
}

/// Runs one trial; dispatches on the stopping rule.
pub fn run_trial(env: &Environment, cfg: &TrialConfig) -> Result<TrialResult> {
    cfg.validate()?;
    env.validate()?;
    if env.subgroup_count() != cfg.subgroup_count {
        return Err(Error::ShapeMismatch { expected: cfg.subgroup_count, actual: env.subgroup_count() });
    }
    match cfg.stopping {
        Some(rule) => execute(env, cfg, rule.max_cohorts, Some(rule)),
        None => execute(env, cfg, cfg.cohorts, None),
    }
}

/// Runs cohorts until the stopping rule holds or its cap is reached.
pub fn run_until_confidence(env: &Environment, cfg: &TrialConfig) -> Result<TrialResult> {
    if cfg.stopping.is_none() {
        return Err(Error::InvalidConfig { field: "stopping", reason: "a stopping rule is required".into() });
    }
    run_trial(env, cfg)
}

fn execute(env: &Environment, cfg: &TrialConfig, max_cohorts: u32, stopping: Option<StoppingRule>) -> Result<TrialResult> {
    let lp = cfg.loss;
    let mut state = cfg.initial_state()?;
    if let Some(pilot) = &cfg.pilot {
        let obs = build_informative_prior(env, pilot.per_cell_samples, &pilot.subgroups, cfg.seed)?;
        state = state.with_pseudo_observations(&obs)?;
    }
    let x_count = cfg.subgroup_count;
    let mut log = Vec::with_capacity(max_cohorts as usize);
    let mut recruitment = alloc::vec![[0u64; 2]; x_count];
    let mut probs = state.prob_effective_all(lp.tau);
    let mut prob_history = alloc::vec![probs.clone()];

    for k in 0..max_cohorts {
        if let Some(rule) = stopping {
            if rule.satisfied(&probs, lp.lambda) {
                break;
            }
        }
        let mut tie = TieBreakRng::for_cohort(cfg.seed, k as u64);
        let u = choose_action(cfg.policy, &cfg.settings, &state, cfg.cohort_size, &lp, max_cohorts - k, &mut tie)?;
        let mut out_rng = TieBreakRng::in_domain(cfg.seed, Domain::Outcomes, k as u64);
        let w = sample_outcomes(env, &u, &mut out_rng)?;
        state = state.transition(&u, &w)?;
        for (x, c) in u.counts().iter().enumerate() {
            recruitment[x][0] += c[0];
            recruitment[x][1] += c[1];
        }
        log.push(CohortRecord { allocation: u, outcome: w });
        probs = state.prob_effective_all(lp.tau);
        prob_history.push(probs.clone());
    }

    let estimated = classify_probs(&probs, lp.lambda);
    let truth = env.truly_effective(lp.tau);
    let errors = realized_errors(&estimated, &truth, lp.lambda);
    Ok(TrialResult {
        final_state: state,
        cohorts_used: log.len() as u32,
        log,
        estimated,
        truth,
        errors,
        prob_history,
        recruitment,
    })
}
