//! Experiment presets for the synthetic Bernoulli study.
//!
//! Every preset uses λ = 0.5 and τ = 0 unless it sweeps them, and derives all
//! replicate seeds from one master seed, so a rerun is bit-identical whether
//! replicates execute serially or in parallel.

use std::fmt;
use std::str::FromStr;

use rctkg_core::sim::{PilotPrior, StoppingRule};
use rctkg_core::{Environment, LossParams, PolicyKind, Result, TrialConfig};

use crate::replicate::{mean_se, replicate, Execution, Replicated};
use crate::table::{Cell, ResultSet};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    TwoSubgroupSweep,
    FourSubgroupConfidence,
    TrialLength,
    BudgetCurve,
    CohortSize,
    LambdaTradeoff,
    InformativePrior,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::TwoSubgroupSweep,
        Preset::FourSubgroupConfidence,
        Preset::TrialLength,
        Preset::BudgetCurve,
        Preset::CohortSize,
        Preset::LambdaTradeoff,
        Preset::InformativePrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoSubgroupSweep => "two_subgroup_sweep",
            Preset::FourSubgroupConfidence => "four_subgroup_confidence",
            Preset::TrialLength => "trial_length",
            Preset::BudgetCurve => "budget_curve",
            Preset::CohortSize => "cohort_size",
            Preset::LambdaTradeoff => "lambda_tradeoff",
            Preset::InformativePrior => "informative_prior",
        }
    }

    pub fn default_replicates(self) -> u64 {
        match self {
            Preset::TwoSubgroupSweep | Preset::TrialLength | Preset::LambdaTradeoff => 500,
            _ => 1000,
        }
    }

    pub fn default_policies(self) -> Vec<PolicyKind> {
        use PolicyKind::*;
        match self {
            Preset::FourSubgroupConfidence | Preset::BudgetCurve => vec![Rctkg, Uniform, Thompson, Dexfem],
            Preset::LambdaTradeoff => vec![Rctkg],
            _ => vec![Rctkg, Uniform],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Preset::ALL.into_iter().find(|p| p.name() == key).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset `{s}` (known: {})", names.join(", "))
        })
    }
}

/// A preset plus overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub replicates: u64,
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    pub execution: Execution,
}

impl ExperimentSpec {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            replicates: preset.default_replicates(),
            seed: DEFAULT_SEED,
            policies: preset.default_policies(),
            execution: Execution::Parallel,
        }
    }

    pub fn replicates(mut self, n: u64) -> Self {
        self.replicates = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn policies(mut self, p: &[PolicyKind]) -> Self {
        self.policies = p.to_vec();
        self
    }

    pub fn execution(mut self, e: Execution) -> Self {
        self.execution = e;
        self
    }

    fn run(&self, env: &Environment, cfg: &TrialConfig) -> Result<Replicated> {
        replicate(env, cfg, self.replicates, self.execution)
    }
}

/// Four subgroups, control 0.5 everywhere, treatment 0.3 / 0.45 / 0.55 / 0.7.
pub fn four_subgroups() -> Environment {
    Environment { control: vec![0.5; 4], treatment: vec![0.3, 0.45, 0.55, 0.7] }
}

/// Two subgroups, control 0.5, treatment `theta01` and 0.7.
pub fn two_subgroups(theta01: f64) -> Environment {
    Environment { control: vec![0.5, 0.5], treatment: vec![theta01, 0.7] }
}

pub const SWEEP_POINTS: std::ops::RangeInclusive<u32> = 51..=70;
pub const BUDGETS: [u64; 5] = [200, 400, 600, 800, 1000];
pub const COHORT_SIZES: [u64; 4] = [25, 50, 100, 250];
pub const COHORT_SIZE_BUDGET: u64 = 500;
pub const BETAS: [f64; 2] = [0.95, 0.90];
pub const LENGTH_CAP: u32 = 60;
pub const LAMBDAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const PILOT_SAMPLES: u64 = 50;
pub const PRIOR_BUDGETS: [u64; 2] = [500, 1000];

/// Pilot-prior variants: label and the subgroups that receive pilot samples.
pub const PRIOR_VARIANTS: [(&str, &[usize]); 3] = [("none", &[]), ("sg_0_3", &[0, 3]), ("sg_1_2", &[1, 2])];

fn config(x: usize, cohorts: u32, m: u64, policy: PolicyKind, seed: u64) -> TrialConfig {
    TrialConfig::fixed(x, cohorts, m, policy, seed)
}

pub struct SweepRun {
    pub policy: PolicyKind,
    pub theta01: f64,
    pub rep: Replicated,
}

pub fn two_subgroup_sweep_runs(spec: &ExperimentSpec) -> Result<Vec<SweepRun>> {
    let mut out = Vec::new();
    for i in SWEEP_POINTS {
        let theta01 = i as f64 / 100.0;
        let env = two_subgroups(theta01);
        for &policy in &spec.policies {
            let rep = spec.run(&env, &config(2, 10, 100, policy, spec.seed))?;
            out.push(SweepRun { policy, theta01, rep });
        }
    }
    Ok(out)
}

pub struct PolicyRun {
    pub policy: PolicyKind,
    pub rep: Replicated,
}

pub fn four_subgroup_runs(spec: &ExperimentSpec) -> Result<Vec<PolicyRun>> {
    let env = four_subgroups();
    spec.policies
        .iter()
        .map(|&policy| Ok(PolicyRun { policy, rep: spec.run(&env, &config(4, 10, 100, policy, spec.seed))? }))
        .collect()
}

pub struct LengthRun {
    pub policy: PolicyKind,
    pub beta: f64,
    pub rep: Replicated,
}

pub fn trial_length_runs(spec: &ExperimentSpec) -> Result<Vec<LengthRun>> {
    let env = four_subgroups();
    let mut out = Vec::new();
    for beta in BETAS {
        for &policy in &spec.policies {
            let mut cfg = config(4, 0, 100, policy, spec.seed);
            cfg.stopping = Some(StoppingRule::new(beta, LENGTH_CAP));
            cfg.cohorts = LENGTH_CAP;
            cfg.budget = LENGTH_CAP as u64 * 100;
            out.push(LengthRun { policy, beta, rep: spec.run(&env, &cfg)? });
        }
    }
    Ok(out)
}

pub struct BudgetRun {
    pub policy: PolicyKind,
    pub budget: u64,
    pub rep: Replicated,
}

pub fn budget_curve_runs(spec: &ExperimentSpec) -> Result<Vec<BudgetRun>> {
    let env = four_subgroups();
    let mut out = Vec::new();
    for budget in BUDGETS {
        for &policy in &spec.policies {
            let rep = spec.run(&env, &config(4, (budget / 100) as u32, 100, policy, spec.seed))?;
            out.push(BudgetRun { policy, budget, rep });
        }
    }
    Ok(out)
}

pub struct CohortSizeRun {
    pub policy: PolicyKind,
    pub cohort_size: u64,
    /// Whether the row reuses another cohort size's replicates.
    pub shared: bool,
    pub rep: Replicated,
}

/// Policies that ignore the state (uniform) give the same final-state law for
/// every cohort size at a fixed budget, so their replicates are run once and
/// reported for every `m`.
pub fn cohort_size_runs(spec: &ExperimentSpec) -> Result<Vec<CohortSizeRun>> {
    let env = four_subgroups();
    let mut out = Vec::new();
    for &policy in &spec.policies {
        if policy == PolicyKind::Uniform {
            let m0 = COHORT_SIZES[0];
            let rep = spec.run(&env, &config(4, (COHORT_SIZE_BUDGET / m0) as u32, m0, policy, spec.seed))?;
            for (i, m) in COHORT_SIZES.into_iter().enumerate() {
                out.push(CohortSizeRun { policy, cohort_size: m, shared: i > 0, rep: rep.clone() });
            }
        } else {
            for m in COHORT_SIZES {
                let rep = spec.run(&env, &config(4, (COHORT_SIZE_BUDGET / m) as u32, m, policy, spec.seed))?;
                out.push(CohortSizeRun { policy, cohort_size: m, shared: false, rep });
            }
        }
    }
    Ok(out)
}

pub struct LambdaRun {
    pub policy: PolicyKind,
    pub lambda: f64,
    pub rep: Replicated,
}

pub fn lambda_tradeoff_runs(spec: &ExperimentSpec) -> Result<Vec<LambdaRun>> {
    let env = four_subgroups();
    let mut out = Vec::new();
    for lambda in LAMBDAS {
        for &policy in &spec.policies {
            let mut cfg = config(4, 10, 100, policy, spec.seed);
            cfg.loss = LossParams { lambda, tau: 0.0 };
            out.push(LambdaRun { policy, lambda, rep: spec.run(&env, &cfg)? });
        }
    }
    Ok(out)
}

pub struct PriorRun {
    pub prior: &'static str,
    pub budget: u64,
    pub policy: PolicyKind,
    pub rep: Replicated,
}

pub fn informative_prior_config(policy: PolicyKind, budget: u64, pilot: &[usize], seed: u64) -> TrialConfig {
    let mut cfg = config(4, (budget / 100) as u32, 100, policy, seed);
    if !pilot.is_empty() {
        cfg.pilot = Some(PilotPrior { per_cell_samples: PILOT_SAMPLES, subgroups: pilot.to_vec() });
    }
    cfg
}

pub fn informative_prior_runs(spec: &ExperimentSpec) -> Result<Vec<PriorRun>> {
    let env = four_subgroups();
    let mut out = Vec::new();
    for (prior, subgroups) in PRIOR_VARIANTS {
        for budget in PRIOR_BUDGETS {
            for &policy in &spec.policies {
                let rep = spec.run(&env, &informative_prior_config(policy, budget, subgroups, spec.seed))?;
                out.push(PriorRun { prior, budget, policy, rep });
            }
        }
    }
    Ok(out)
}

fn p(policy: PolicyKind) -> Cell {
    policy.as_str().into()
}

pub fn two_subgroup_sweep_table(runs: &[SweepRun]) -> ResultSet {
    let mut t = ResultSet::new(
        "two_subgroup_sweep",
        &[
            "policy",
            "theta01",
            "error_rate",
            "error_rate_se",
            "type_one",
            "type_two",
            "total",
            "total_se",
            "expected_error",
            "expected_error_se",
            "recruit_sg0",
            "recruit_sg1",
        ],
    );
    for r in runs {
        let m = &r.rep.metrics;
        let (ee, ee_se) = r.rep.expected_error_mean_se();
        let rec = m.subgroup_recruitment();
        t.push(vec![
            p(r.policy),
            r.theta01.into(),
            m.error_rate.mean.into(),
            m.error_rate.std_error.into(),
            m.type_one.mean.into(),
            m.type_two.mean.into(),
            m.total.mean.into(),
            m.total.std_error.into(),
            ee.into(),
            ee_se.into(),
            rec[0].into(),
            rec[1].into(),
        ]);
    }
    t
}

pub fn four_subgroup_tables(runs: &[PolicyRun]) -> Vec<ResultSet> {
    let mut conf = ResultSet::new("four_subgroup_confidence", &["policy", "subgroup", "confidence_pct", "stderr"]);
    let mut by_cohort = ResultSet::new(
        "four_subgroup_confidence_by_cohort",
        &["policy", "cohort", "subgroup", "confidence_pct", "stderr"],
    );
    let mut rec = ResultSet::new("four_subgroup_recruitment", &["policy", "subgroup", "control", "treatment", "total"]);
    let mut err = ResultSet::new(
        "four_subgroup_errors",
        &["policy", "error_rate", "error_rate_se", "type_one", "type_one_se", "type_two", "type_two_se", "total", "total_se"],
    );
    for r in runs {
        let m = &r.rep.metrics;
        for x in 0..m.confidence_pct.len() {
            conf.push(vec![p(r.policy), x.into(), m.confidence_pct[x].into(), m.confidence_se[x].into()]);
            let c = m.recruitment[x];
            rec.push(vec![p(r.policy), x.into(), c[0].into(), c[1].into(), (c[0] + c[1]).into()]);
        }
        let n = m.replicates as f64;
        for (k, row) in m.confidence_by_cohort.iter().enumerate().skip(1) {
            for (x, &pct) in row.iter().enumerate() {
                let se = if n > 1.0 { (pct * (100.0 - pct) / n).sqrt() } else { 0.0 };
                by_cohort.push(vec![p(r.policy), k.into(), x.into(), pct.into(), se.into()]);
            }
        }
        err.push(vec![
            p(r.policy),
            m.error_rate.mean.into(),
            m.error_rate.std_error.into(),
            m.type_one.mean.into(),
            m.type_one.std_error.into(),
            m.type_two.mean.into(),
            m.type_two.std_error.into(),
            m.total.mean.into(),
            m.total.std_error.into(),
        ]);
    }
    vec![conf, by_cohort, rec, err]
}

pub fn trial_length_table(runs: &[LengthRun]) -> ResultSet {
    let mut t = ResultSet::new(
        "trial_length",
        &["policy", "beta", "mean_cohorts", "stderr", "error_rate", "error_rate_se"],
    );
    for r in runs {
        let m = &r.rep.metrics;
        t.push(vec![
            p(r.policy),
            r.beta.into(),
            m.cohorts_used.mean.into(),
            m.cohorts_used.std_error.into(),
            m.error_rate.mean.into(),
            m.error_rate.std_error.into(),
        ]);
    }
    t
}

fn error_columns(m: &rctkg_core::MetricsRecord) -> Vec<Cell> {
    vec![
        m.type_one.mean.into(),
        m.type_one.std_error.into(),
        m.type_two.mean.into(),
        m.type_two.std_error.into(),
        m.error_rate.mean.into(),
        m.error_rate.std_error.into(),
        m.total.mean.into(),
        m.total.std_error.into(),
    ]
}

const ERROR_COLUMNS: [&str; 8] =
    ["type_one", "type_one_se", "type_two", "type_two_se", "error_rate", "error_rate_se", "total", "total_se"];

fn columns(head: &[&'static str]) -> Vec<&'static str> {
    head.iter().copied().chain(ERROR_COLUMNS).collect()
}

pub fn budget_curve_table(runs: &[BudgetRun]) -> ResultSet {
    let mut t = ResultSet::new("budget_curve", &columns(&["policy", "budget"]));
    for r in runs {
        let mut row = vec![p(r.policy), r.budget.into()];
        row.extend(error_columns(&r.rep.metrics));
        t.push(row);
    }
    t
}

pub fn cohort_size_table(runs: &[CohortSizeRun]) -> ResultSet {
    let mut t = ResultSet::new(
        "cohort_size",
        &["policy", "cohort_size", "cohorts", "error_rate", "error_rate_se", "total", "total_se", "shared_run"],
    );
    for r in runs {
        let m = &r.rep.metrics;
        t.push(vec![
            p(r.policy),
            r.cohort_size.into(),
            (COHORT_SIZE_BUDGET / r.cohort_size).into(),
            m.error_rate.mean.into(),
            m.error_rate.std_error.into(),
            m.total.mean.into(),
            m.total.std_error.into(),
            (if r.shared { "yes" } else { "no" }).into(),
        ]);
    }
    t
}

pub fn lambda_tradeoff_table(runs: &[LambdaRun]) -> ResultSet {
    let mut t = ResultSet::new("lambda_tradeoff", &columns(&["policy", "lambda"]));
    for r in runs {
        let mut row = vec![p(r.policy), r.lambda.into()];
        row.extend(error_columns(&r.rep.metrics));
        t.push(row);
    }
    t
}

/// Main table plus several candidate "improvement" scores of RCT-KG over the
/// uniform baseline; none of them is privileged.
pub fn informative_prior_tables(runs: &[PriorRun]) -> Vec<ResultSet> {
    let mut main = ResultSet::new(
        "informative_prior",
        &[
            "prior",
            "budget",
            "policy",
            "error_rate",
            "error_rate_se",
            "total",
            "total_se",
            "expected_error",
            "expected_error_se",
            "first_cohort_sg0",
            "first_cohort_sg1",
            "first_cohort_sg2",
            "first_cohort_sg3",
        ],
    );
    for r in runs {
        let m = &r.rep.metrics;
        let (ee, ee_se) = r.rep.expected_error_mean_se();
        let mut row = vec![
            r.prior.into(),
            r.budget.into(),
            p(r.policy),
            m.error_rate.mean.into(),
            m.error_rate.std_error.into(),
            m.total.mean.into(),
            m.total.std_error.into(),
            ee.into(),
            ee_se.into(),
        ];
        row.extend(first_cohort_means(&r.rep, 4).into_iter().map(Cell::from));
        main.push(row);
    }
    let mut scores = ResultSet::new(
        "informative_prior_scores",
        &[
            "prior",
            "budget",
            "uniform_error_rate",
            "rctkg_error_rate",
            "difference",
            "relative_reduction",
            "expected_error_difference",
            "expected_error_relative_reduction",
            "improvement_change",
            "improvement_change_se",
            "improvement_change_z",
            "claim_supported",
        ],
    );
    for (prior, _) in PRIOR_VARIANTS {
        for budget in PRIOR_BUDGETS {
            let find = |k| runs.iter().find(|r| r.prior == prior && r.budget == budget && r.policy == k);
            let base = |k| runs.iter().find(|r| r.prior == PRIOR_VARIANTS[0].0 && r.budget == budget && r.policy == k);
            if let (Some(ua), Some(kg)) = (find(PolicyKind::Uniform), find(PolicyKind::Rctkg)) {
                // Paired change of the per-replicate improvement (UA - RCT-KG)
                // against the non-informative run with the same seeds.
                let (change, se) = match (base(PolicyKind::Uniform), base(PolicyKind::Rctkg)) {
                    (Some(ua0), Some(kg0)) if prior != PRIOR_VARIANTS[0].0 => {
                        let d: Vec<f64> = (0..ua.rep.error_rate.len())
                            .map(|i| {
                                (ua.rep.error_rate[i] - kg.rep.error_rate[i])
                                    - (ua0.rep.error_rate[i] - kg0.rep.error_rate[i])
                            })
                            .collect();
                        mean_se(&d)
                    }
                    _ => (0.0, 0.0),
                };
                let z = if se > 0.0 { change / se } else { 0.0 };
                let (a, b) = (ua.rep.metrics.error_rate.mean, kg.rep.metrics.error_rate.mean);
                let (ea, eb) = (ua.rep.expected_error_mean_se().0, kg.rep.expected_error_mean_se().0);
                scores.push(vec![
                    prior.into(),
                    budget.into(),
                    a.into(),
                    b.into(),
                    (a - b).into(),
                    (if a > 0.0 { (a - b) / a } else { 0.0 }).into(),
                    (ea - eb).into(),
                    (if ea > 0.0 { (ea - eb) / ea } else { 0.0 }).into(),
                    change.into(),
                    se.into(),
                    z.into(),
                    (if prior == PRIOR_VARIANTS[0].0 { "n/a" } else if z > 1.645 { "yes" } else { "no" }).into(),
                ]);
            }
        }
    }
    vec![main, scores]
}

/// Mean cohort-1 recruitment per subgroup.
pub fn first_cohort_means(rep: &Replicated, x: usize) -> Vec<f64> {
    let mut sums = vec![0.0; x];
    let mut n = 0.0;
    for c in rep.first_cohort.iter().flatten() {
        n += 1.0;
        for (s, cell) in sums.iter_mut().zip(c) {
            *s += (cell[0] + cell[1]) as f64;
        }
    }
    sums.iter().map(|s| if n > 0.0 { s / n } else { 0.0 }).collect()
}

/// Runs a preset and returns its result sets.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultSet>> {
    Ok(match spec.preset {
        Preset::TwoSubgroupSweep => vec![two_subgroup_sweep_table(&two_subgroup_sweep_runs(spec)?)],
        Preset::FourSubgroupConfidence => four_subgroup_tables(&four_subgroup_runs(spec)?),
        Preset::TrialLength => vec![trial_length_table(&trial_length_runs(spec)?)],
        Preset::BudgetCurve => vec![budget_curve_table(&budget_curve_runs(spec)?)],
        Preset::CohortSize => vec![cohort_size_table(&cohort_size_runs(spec)?)],
        Preset::LambdaTradeoff => vec![lambda_tradeoff_table(&lambda_tradeoff_runs(spec)?)],
        Preset::InformativePrior => informative_prior_tables(&informative_prior_runs(spec)?),
    })
}
