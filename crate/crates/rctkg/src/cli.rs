//! Command-line interface.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rctkg_core::policies::rctkg_action;
use rctkg_core::{expected_total_error, LossParams, PolicyKind, StateMatrix, TieBreakRng};
use serde_json::json;

use crate::config;
use crate::error::CliError;
use crate::oracle::oracle_report;
use crate::presets::{run_experiment, ExperimentSpec, Preset};
use crate::replicate::{replicate, Execution};
use crate::service::{self, store::Fault, store::Store, AppState};
use crate::statefile;
use crate::table::{emit_results, timestamp, Format, ResultSet, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "rctkg", version, about = "Adaptive patient recruitment and allocation for cohort-based trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replicate trials described by a config file.
    Simulate(SimulateArgs),
    /// Run a named experiment preset.
    Experiment(ExperimentArgs),
    /// Recommend the next cohort's allocation from a state file.
    Recommend(RecommendArgs),
    /// Serve the HTTP trial API.
    Serve(ServeArgs),
    /// Compare heuristics with the exact oracles on tiny instances.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `replicates` in the config.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: Option<u64>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run replicates on one thread.
    #[arg(long)]
    pub serial: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub preset: Preset,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated policy names replacing the preset's list.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    pub policies: Option<Vec<PolicyKind>>,
    #[arg(long)]
    pub serial: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// State file; see `docs/state-format.md`.
    #[arg(long, required_unless_present = "fresh")]
    pub state: Option<PathBuf>,
    /// Start from a fresh prior with this many subgroups instead of a state file.
    #[arg(long, conflicts_with = "state", value_parser = clap::value_parser!(u64).range(1..))]
    pub fresh: Option<u64>,
    /// Patients in the cohort.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub cohort_size: u64,
    #[arg(long, default_value_t = config::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = config::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cohort index, selecting the tie-break stream.
    #[arg(long, default_value_t = 0)]
    pub cohort: u64,
    /// Observed outcomes of the recommended cohort; writes the updated state.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Where to write the updated state (default: overwrite `--state`).
    #[arg(long)]
    pub write_state: Option<PathBuf>,
    /// Accept outcomes whose enrollment differs from the recommendation.
    #[arg(long)]
    pub allow_partial: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Directory holding one event log per session.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Require `Authorization: Bearer <token>`.
    #[arg(long, env = "RCTKG_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Seconds between background consistency checks; 0 disables them.
    #[arg(long, default_value_t = 300)]
    pub check_interval: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s).ok_or_else(|| format!("unknown policy `{s}`"))
}

fn execution(serial: bool) -> Execution {
    if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::Recommend(a) => recommend(a).map(|out| print!("{out}")),
        Command::Serve(a) => serve(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let started_at = timestamp();
    let text = std::fs::read_to_string(&a.config).map_err(|e| CliError::Io { path: a.config.clone(), source: e })?;
    let mut resolved = config::parse_toml(&text)?;
    if let Some(n) = a.replicates {
        resolved.doc.replicates = n;
    }
    if let Some(s) = a.seed {
        resolved.doc.seed = s;
    }
    let resolved = config::resolve(resolved.doc)?;
    let env = resolved
        .environment
        .clone()
        .ok_or_else(|| CliError::Validation("config field `environment`: required by `simulate`".into()))?;
    let rep = replicate(&env, &resolved.trial, resolved.replicates, execution(a.serial))?;
    let m = &rep.metrics;
    let mut summary = ResultSet::new(
        "simulate_summary",
        &[
            "policy",
            "replicates",
            "error_rate",
            "error_rate_se",
            "type_one",
            "type_one_se",
            "type_two",
            "type_two_se",
            "total",
            "total_se",
            "mean_cohorts",
            "mean_cohorts_se",
        ],
    );
    summary.push(vec![
        resolved.trial.policy.as_str().into(),
        m.replicates.into(),
        m.error_rate.mean.into(),
        m.error_rate.std_error.into(),
        m.type_one.mean.into(),
        m.type_one.std_error.into(),
        m.type_two.mean.into(),
        m.type_two.std_error.into(),
        m.total.mean.into(),
        m.total.std_error.into(),
        m.cohorts_used.mean.into(),
        m.cohorts_used.std_error.into(),
    ]);
    let mut subgroups = ResultSet::new(
        "simulate_subgroups",
        &["subgroup", "confidence_pct", "stderr", "recruit_control", "recruit_treatment"],
    );
    for x in 0..m.confidence_pct.len() {
        subgroups.push(vec![
            x.into(),
            m.confidence_pct[x].into(),
            m.confidence_se[x].into(),
            m.recruitment[x][0].into(),
            m.recruitment[x][1].into(),
        ]);
    }
    let manifest = RunManifest {
        command: "simulate".into(),
        config: resolved.echo_json(),
        seed: resolved.trial.seed,
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: String::new(),
        outputs: Vec::new(),
    };
    report_paths(&emit_results(&[summary, subgroups], a.output.format, &a.output.out, manifest)?);
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let started_at = timestamp();
    let mut spec = ExperimentSpec::new(a.preset).execution(execution(a.serial));
    if let Some(n) = a.replicates {
        spec = spec.replicates(n);
    }
    if let Some(s) = a.seed {
        spec = spec.seed(s);
    }
    if let Some(p) = &a.policies {
        spec = spec.policies(p);
    }
    let sets = run_experiment(&spec)?;
    let manifest = RunManifest {
        command: "experiment".into(),
        config: json!({
            "preset": spec.preset.name(),
            "replicates": spec.replicates,
            "seed": spec.seed,
            "policies": spec.policies.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
        }),
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: String::new(),
        outputs: Vec::new(),
    };
    report_paths(&emit_results(&sets, a.output.format, &a.output.out, manifest)?);
    Ok(())
}

/// Prints the allocation table and, with `--outcomes`, writes the updated
/// state. Returns the text printed to stdout.
pub fn recommend(a: RecommendArgs) -> Result<String, CliError> {
    let lp = LossParams::new(a.lambda, a.tau).map_err(|e| CliError::Validation(e.to_string()))?;
    let state = match (&a.state, a.fresh) {
        (Some(p), _) if a.fresh.is_none() => statefile::read_state(p)?,
        (None, Some(x)) => StateMatrix::fresh(x as usize),
        _ => return Err(CliError::Validation("give exactly one of --state and --fresh".into())),
    };
    let mut rng = TieBreakRng::for_cohort(a.seed, a.cohort);
    let u = rctkg_action(&state, a.cohort_size, &lp, &mut rng)?;
    let mut out = statefile::allocation_table(&u);
    let probs = state.prob_effective_all(lp.tau);
    out.push_str("\nsubgroup,prob_effective\n");
    for (x, p) in probs.iter().enumerate() {
        out.push_str(&format!("{x},{p}\n"));
    }
    out.push_str(&format!("\nexpected_total_error,{}\n", expected_total_error(&state, &lp)));

    if let Some(op) = &a.outcomes {
        let (enrolled, w) = statefile::read_outcomes(op, state.subgroup_count())?;
        if enrolled != u && !a.allow_partial {
            return Err(CliError::Validation(format!(
                "{}: enrolled counts {:?} differ from the recommendation {:?}; pass --allow-partial to accept",
                op.display(),
                enrolled.counts(),
                u.counts()
            )));
        }
        let next = state.transition(&enrolled, &w)?;
        let target = a
            .write_state
            .clone()
            .or_else(|| a.state.clone())
            .ok_or_else(|| CliError::Validation("--write-state is required with --fresh".into()))?;
        crate::table::write_atomic(&target, statefile::write_state(&next).as_bytes())?;
        out.push_str(&format!("\nwrote {}\n", target.display()));
    }
    Ok(out)
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let store = Store::open(&a.data, Fault::from_env()).map_err(|e| CliError::Io { path: a.data.clone(), source: e })?;
    let state = AppState { store: Arc::new(store), token: a.token.map(Arc::from) };
    let every = (a.check_interval > 0).then(|| Duration::from_secs(a.check_interval));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(service::serve(&a.bind, state, every)).map_err(|e| CliError::Runtime(format!("{}: {e}", a.bind)))
}

pub fn oracle(a: OracleArgs) -> Result<(), CliError> {
    let started_at = timestamp();
    let sets = oracle_report(a.instances, a.seed)?;
    let manifest = RunManifest {
        command: "oracle".into(),
        config: json!({ "instances": a.instances, "seed": a.seed }),
        seed: a.seed,
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: String::new(),
        outputs: Vec::new(),
    };
    report_paths(&emit_results(&sets, a.output.format, &a.output.out, manifest)?);
    Ok(())
}

/// Writes a fresh state file; used by tests and documentation examples.
pub fn write_fresh_state(path: &Path, subgroups: usize) -> Result<(), CliError> {
    crate::table::write_atomic(path, statefile::write_state(&StateMatrix::fresh(subgroups)).as_bytes())
}

