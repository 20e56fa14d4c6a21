//! Trial configuration documents.
//!
//! The same document shape is read from TOML files by the CLI and from JSON
//! request bodies by the service. See `docs/config.md` for the schema.

use std::fmt;

use rctkg_core::sim::{ConfidenceStatistic, PilotPrior, StoppingRule};
use rctkg_core::{
    Arm, Environment, LossParams, PolicyKind, PolicySettings, PseudoObservation, TrialConfig, UniformMode,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.0;
pub const DEFAULT_REPLICATES: u64 = 1000;
pub const DEFAULT_MAX_COHORTS: u32 = 60;

/// A schema violation at `path` (dotted, with `[i]` for list items).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config field `{}`: {}", self.path, self.message)
        }
    }
}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub subgroups: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohorts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_size: Option<u64>,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub settings: SettingsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<StoppingDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<PilotDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior: Vec<PriorDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsDoc {
    #[serde(default)]
    pub uniform_mode: UniformMode,
    #[serde(default = "one")]
    pub dexfem_exponent: f64,
}

impl Default for SettingsDoc {
    fn default() -> Self {
        Self { uniform_mode: UniformMode::default(), dexfem_exponent: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentDoc {
    pub control: Vec<f64>,
    pub treatment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingDoc {
    pub beta: f64,
    #[serde(default = "default_max_cohorts")]
    pub max_cohorts: u32,
    #[serde(default)]
    pub statistic: ConfidenceStatistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotDoc {
    pub per_cell_samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgroups: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDoc {
    pub subgroup: usize,
    pub arm: Arm,
    pub successes: f64,
    pub samples: f64,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Rctkg
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_replicates() -> u64 {
    DEFAULT_REPLICATES
}
fn default_max_cohorts() -> u32 {
    DEFAULT_MAX_COHORTS
}
fn one() -> f64 {
    1.0
}

/// A validated document together with the objects it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// The input with every default written out.
    pub doc: ConfigDoc,
    pub trial: TrialConfig,
    pub environment: Option<Environment>,
    pub replicates: u64,
}

impl Resolved {
    /// Canonical TOML echo of the document.
    pub fn echo_toml(&self) -> String {
        toml::to_string(&self.doc).expect("config documents serialize")
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.doc).expect("config documents serialize")
    }
}

pub fn parse_toml(text: &str) -> Result<Resolved, ConfigError> {
    let de = toml::Deserializer::new(text);
    let doc: ConfigDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        err(path, e.into_inner().message().trim().to_owned())
    })?;
    resolve(doc)
}

pub fn parse_json(text: &str) -> Result<Resolved, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let doc: ConfigDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        err(path, e.into_inner().to_string())
    })?;
    resolve(doc)
}

pub fn parse_json_value(value: serde_json::Value) -> Result<Resolved, ConfigError> {
    let doc: ConfigDoc = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        err(path, e.into_inner().to_string())
    })?;
    resolve(doc)
}

/// Validates a document and fills in derived and default fields.
pub fn resolve(mut doc: ConfigDoc) -> Result<Resolved, ConfigError> {
    if doc.subgroups == 0 {
        return Err(err("subgroups", "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&doc.lambda) {
        return Err(err("lambda", format!("must lie in [0, 1], got {}", doc.lambda)));
    }
    if !(doc.tau >= 0.0 && doc.tau.is_finite()) {
        return Err(err("tau", format!("must be finite and nonnegative, got {}", doc.tau)));
    }
    if doc.replicates == 0 {
        return Err(err("replicates", "must be at least 1"));
    }
    if !(doc.settings.dexfem_exponent.is_finite() && doc.settings.dexfem_exponent >= 0.0) {
        return Err(err("settings.dexfem_exponent", "must be finite and nonnegative"));
    }

    let stopping = match &doc.stopping {
        None => None,
        Some(s) => {
            if !(s.beta > 0.5 && s.beta < 1.0) {
                return Err(err("stopping.beta", format!("must lie in (0.5, 1), got {}", s.beta)));
            }
            if s.max_cohorts == 0 {
                return Err(err("stopping.max_cohorts", "must be at least 1"));
            }
            Some(StoppingRule { beta: s.beta, max_cohorts: s.max_cohorts, statistic: s.statistic })
        }
    };

    let (budget, cohorts, cohort_size) = match stopping {
        None => horizon(doc.budget, doc.cohorts, doc.cohort_size)?,
        Some(rule) => {
            let m = doc.cohort_size.ok_or_else(|| err("cohort_size", "required when `stopping` is set"))?;
            if m == 0 {
                return Err(err("cohort_size", "must be at least 1"));
            }
            let k = doc.cohorts.unwrap_or(rule.max_cohorts);
            if k != rule.max_cohorts {
                return Err(err(
                    "cohorts",
                    format!("must equal stopping.max_cohorts ({}) when given, got {k}", rule.max_cohorts),
                ));
            }
            let n = k as u64 * m;
            if let Some(b) = doc.budget {
                if b != n {
                    return Err(err(
                        "budget",
                        format!("budget ({b}) must equal stopping.max_cohorts ({k}) x cohort_size ({m})"),
                    ));
                }
            }
            (n, k, m)
        }
    };
    doc.budget = Some(budget);
    doc.cohorts = Some(cohorts);
    doc.cohort_size = Some(cohort_size);

    let environment = match &doc.environment {
        None => None,
        Some(e) => {
            if e.control.len() != doc.subgroups {
                return Err(err(
                    "environment.control",
                    format!("expected {} entries, got {}", doc.subgroups, e.control.len()),
                ));
            }
            if e.treatment.len() != doc.subgroups {
                return Err(err(
                    "environment.treatment",
                    format!("expected {} entries, got {}", doc.subgroups, e.treatment.len()),
                ));
            }
            for (name, v) in [("control", &e.control), ("treatment", &e.treatment)] {
                if let Some(i) = v.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
                    return Err(err(format!("environment.{name}[{i}]"), format!("must lie in (0, 1), got {}", v[i])));
                }
            }
            Some(Environment { control: e.control.clone(), treatment: e.treatment.clone() })
        }
    };

    let mut prior = Vec::with_capacity(doc.prior.len());
    for (i, p) in doc.prior.iter().enumerate() {
        if p.subgroup >= doc.subgroups {
            return Err(err(format!("prior[{i}].subgroup"), format!("must be below {}", doc.subgroups)));
        }
        if !(p.samples >= 0.0 && p.samples.is_finite()) {
            return Err(err(format!("prior[{i}].samples"), "must be finite and nonnegative"));
        }
        if !(p.successes >= 0.0 && p.successes <= p.samples) {
            return Err(err(format!("prior[{i}].successes"), format!("must lie in [0, samples], got {}", p.successes)));
        }
        prior.push(PseudoObservation { subgroup: p.subgroup, arm: p.arm, successes: p.successes, samples: p.samples });
    }

    let pilot = match &mut doc.pilot {
        None => None,
        Some(p) => {
            let subgroups = p.subgroups.get_or_insert_with(|| (0..doc.subgroups).collect()).clone();
            if let Some(i) = subgroups.iter().position(|&x| x >= doc.subgroups) {
                return Err(err(format!("pilot.subgroups[{i}]"), format!("must be below {}", doc.subgroups)));
            }
            Some(PilotPrior { per_cell_samples: p.per_cell_samples, subgroups })
        }
    };

    let trial = TrialConfig {
        subgroup_count: doc.subgroups,
        budget,
        cohorts,
        cohort_size,
        loss: LossParams { lambda: doc.lambda, tau: doc.tau },
        policy: doc.policy,
        settings: PolicySettings {
            uniform_mode: doc.settings.uniform_mode,
            dexfem_exponent: doc.settings.dexfem_exponent,
        },
        seed: doc.seed,
        prior,
        pilot,
        stopping,
    };
    trial.validate().map_err(|e| match e {
        rctkg_core::Error::InvalidConfig { field, reason } => err(field, reason),
        other => err("", other.to_string()),
    })?;
    Ok(Resolved { replicates: doc.replicates, doc, trial, environment })
}

/// Fills in whichever of `N`, `K`, `M` is missing and checks `N = K * M`.
fn horizon(budget: Option<u64>, cohorts: Option<u32>, size: Option<u64>) -> Result<(u64, u32, u64), ConfigError> {
    let mismatch = |n: u64, k: u32, m: u64| {
        err("budget", format!("budget ({n}) must equal cohorts ({k}) x cohort_size ({m}) in fixed-horizon mode"))
    };
    match (budget, cohorts, size) {
        (_, _, Some(0)) => Err(err("cohort_size", "must be at least 1")),
        (Some(n), Some(k), Some(m)) => {
            if k as u64 * m != n {
                Err(mismatch(n, k, m))
            } else {
                Ok((n, k, m))
            }
        }
        (None, Some(k), Some(m)) => Ok((k as u64 * m, k, m)),
        (Some(n), Some(k), None) => {
            if k == 0 || n % k as u64 != 0 {
                Err(err("cohort_size", format!("missing, and budget ({n}) is not a multiple of cohorts ({k})")))
            } else {
                Ok((n, k, n / k as u64))
            }
        }
        (Some(n), None, Some(m)) => {
            if n % m != 0 {
                Err(err("cohorts", format!("missing, and budget ({n}) is not a multiple of cohort_size ({m})")))
            } else {
                let k = u32::try_from(n / m).map_err(|_| err("cohorts", "too many cohorts"))?;
                Ok((n, k, m))
            }
        }
        _ => Err(err("budget", "give at least two of `budget`, `cohorts` and `cohort_size`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let r = parse_toml("subgroups = 4\nbudget = 1000\ncohorts = 10\npolicy = \"rctkg\"\n").unwrap();
        assert_eq!(r.trial.cohort_size, 100);
        assert_eq!(r.trial.loss, LossParams { lambda: 0.5, tau: 0.0 });
        assert_eq!(r.replicates, 1000);
        assert_eq!(r.trial.policy, PolicyKind::Rctkg);
        assert!(r.trial.stopping.is_none());
    }

    #[test]
    fn inconsistent_horizon_names_all_three() {
        let e = parse_toml("subgroups = 2\nbudget = 900\ncohorts = 10\ncohort_size = 100\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("budget") && msg.contains("cohorts") && msg.contains("cohort_size"), "{msg}");
    }

    #[test]
    fn beta_out_of_range() {
        let e = parse_toml("subgroups = 2\ncohort_size = 100\n[stopping]\nbeta = 1.2\n").unwrap_err();
        assert_eq!(e.path, "stopping.beta");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let e = parse_toml("subgroups = 2\ncohorts = 1\ncohort_size = 2\n[stopping]\nbeta = 0.9\nbogus = 1\n")
            .unwrap_err();
        assert_eq!(e.path, "stopping.bogus");
        assert!(e.message.contains("bogus"), "{e}");
        let e = parse_toml("subgroups = 2\ncohorts = 1\ncohort_size = 2\ncolour = 1\n").unwrap_err();
        assert!(e.message.contains("colour"), "{e}");
    }

    #[test]
    fn type_errors_carry_nested_paths() {
        let text = "subgroups = 2\ncohorts = 1\ncohort_size = 2\n[[prior]]\nsubgroup = 0\narm = \"placebo\"\nsuccesses = 1\nsamples = 2\n";
        let e = parse_toml(text).unwrap_err();
        assert_eq!(e.path, "prior[0].arm", "{e}");
    }

    #[test]
    fn lambda_out_of_range() {
        let e = parse_json(r#"{"subgroups": 2, "cohorts": 1, "cohort_size": 10, "lambda": 2}"#).unwrap_err();
        assert_eq!(e.path, "lambda");
    }

    #[test]
    fn echo_is_a_fixed_point() {
        let text = r#"
subgroups = 4
budget = 1000
cohorts = 10
seed = 7

[environment]
control = [0.5, 0.5, 0.5, 0.5]
treatment = [0.3, 0.45, 0.55, 0.7]

[pilot]
per_cell_samples = 50

[[prior]]
subgroup = 1
arm = "treatment"
successes = 3
samples = 4.5
"#;
        let r = parse_toml(text).unwrap();
        let echo = r.echo_toml();
        let again = parse_toml(&echo).unwrap();
        assert_eq!(again, r);
        assert_eq!(again.echo_toml(), echo);
        assert_eq!(again.trial.pilot.as_ref().unwrap().subgroups, vec![0, 1, 2, 3]);
        let json = parse_json(&r.echo_json().to_string()).unwrap();
        assert_eq!(json, r);
    }

    #[test]
    fn stopping_mode_derives_horizon() {
        let r = parse_toml("subgroups = 4\ncohort_size = 100\npolicy = \"uniform\"\n[stopping]\nbeta = 0.95\n").unwrap();
        assert_eq!(r.trial.cohorts, DEFAULT_MAX_COHORTS);
        assert_eq!(r.trial.budget, 6000);
        assert_eq!(r.trial.stopping.unwrap().statistic, ConfidenceStatistic::Misclassification);
    }
}
