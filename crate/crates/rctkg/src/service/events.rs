//! Session events and the fold that rebuilds a session from them.

use rctkg_core::trial::classify_probs;
use rctkg_core::{expected_total_error, Allocation, Arm, CohortOutcome, StateMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigDoc, Resolved};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    Created {
        id: String,
        config: Box<ConfigDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_token: Option<String>,
    },
    Recommended {
        cohort_index: u32,
        allocation: Vec<[u64; 2]>,
    },
    Outcomes {
        cohort_index: u32,
        enrolled: Vec<[u64; 2]>,
        successes: Vec<[u64; 2]>,
        #[serde(default)]
        skipped: bool,
    },
}

/// Why an event cannot follow the current fold.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("event {seq}: {reason}")]
pub struct FoldError {
    pub seq: u64,
    pub reason: String,
}

/// Posterior summary after a cohort (index 0 is the starting prior).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub cohort: u32,
    pub prob_effective: Vec<f64>,
    pub expected_total_error: f64,
}

/// Everything derivable from a session's events.
#[derive(Debug, Clone, PartialEq)]
pub struct Folded {
    pub id: String,
    pub config: Resolved,
    pub request_token: Option<String>,
    pub state: StateMatrix,
    pub cohort_index: u32,
    /// Sequence number and allocation of the unanswered recommendation.
    pub pending: Option<(u64, Allocation)>,
    pub recruitment: Vec<[u64; 2]>,
    pub history: Vec<Snapshot>,
    /// Sequence number of the outcomes event that closed each cohort.
    pub closed_by: Vec<u64>,
    pub last_seq: u64,
}

impl Folded {
    fn start(ev: &Event) -> Result<Self, FoldError> {
        let fail = |reason: String| FoldError { seq: ev.seq, reason };
        let EventBody::Created { id, config, request_token } = &ev.body else {
            return Err(fail("the first event must be `created`".into()));
        };
        if ev.seq != 0 {
            return Err(fail("the first event must have seq 0".into()));
        }
        let config = config::resolve((**config).clone()).map_err(|e| fail(e.to_string()))?;
        let state = config.trial.initial_state().map_err(|e| fail(e.to_string()))?;
        let x = config.trial.subgroup_count;
        let mut f = Folded {
            id: id.clone(),
            config,
            request_token: request_token.clone(),
            state,
            cohort_index: 0,
            pending: None,
            recruitment: vec![[0, 0]; x],
            history: Vec::new(),
            closed_by: Vec::new(),
            last_seq: 0,
        };
        f.history.push(f.snapshot());
        Ok(f)
    }

    fn snapshot(&self) -> Snapshot {
        let lp = self.config.trial.loss;
        Snapshot {
            cohort: self.cohort_index,
            prob_effective: self.state.prob_effective_all(lp.tau),
            expected_total_error: expected_total_error(&self.state, &lp),
        }
    }

    pub fn subgroups(&self) -> usize {
        self.config.trial.subgroup_count
    }

    pub fn prob_effective(&self) -> &[f64] {
        &self.history.last().expect("prior snapshot").prob_effective
    }

    pub fn expected_total_error(&self) -> f64 {
        self.history.last().expect("prior snapshot").expected_total_error
    }

    pub fn estimated_effective(&self) -> Vec<usize> {
        classify_probs(self.prob_effective(), self.config.trial.loss.lambda).into_iter().collect()
    }

    /// No more cohorts: the horizon is used up or the stopping rule holds.
    pub fn is_complete(&self) -> bool {
        if self.cohort_index >= self.config.trial.cohorts {
            return true;
        }
        match self.config.trial.stopping {
            Some(rule) => rule.satisfied(self.prob_effective(), self.config.trial.loss.lambda),
            None => false,
        }
    }

    /// Applies one event after validating it against the current fold.
    pub fn apply(&mut self, ev: &Event) -> Result<(), FoldError> {
        let fail = |reason: String| FoldError { seq: ev.seq, reason };
        if ev.seq != self.last_seq + 1 {
            return Err(fail(format!("expected seq {}", self.last_seq + 1)));
        }
        match &ev.body {
            EventBody::Created { .. } => return Err(fail("duplicate `created` event".into())),
            EventBody::Recommended { cohort_index, allocation } => {
                if *cohort_index != self.cohort_index {
                    return Err(fail(format!("recommendation for cohort {cohort_index}, current is {}", self.cohort_index)));
                }
                if self.is_complete() {
                    return Err(fail("recommendation after the trial completed".into()));
                }
                if self.pending.is_some() {
                    return Err(fail("a recommendation is already pending".into()));
                }
                if allocation.len() != self.subgroups() {
                    return Err(fail("allocation has the wrong number of subgroups".into()));
                }
                self.pending = Some((ev.seq, Allocation::from_counts(allocation.clone())));
            }
            EventBody::Outcomes { cohort_index, enrolled, successes, skipped } => {
                if *cohort_index != self.cohort_index {
                    return Err(fail(format!("outcomes for cohort {cohort_index}, current is {}", self.cohort_index)));
                }
                if self.is_complete() {
                    return Err(fail("outcomes after the trial completed".into()));
                }
                let u = Allocation::from_counts(enrolled.clone());
                let w = CohortOutcome::from_counts(successes.clone());
                let total = u.cohort_size();
                if *skipped != (total == 0) {
                    return Err(fail("a cohort is skipped exactly when nobody is enrolled".into()));
                }
                self.state = self.state.transition(&u, &w).map_err(|e| fail(e.to_string()))?;
                for (r, c) in self.recruitment.iter_mut().zip(u.counts()) {
                    r[0] += c[0];
                    r[1] += c[1];
                }
                self.cohort_index += 1;
                self.pending = None;
                self.closed_by.push(ev.seq);
                self.history.push(self.snapshot());
            }
        }
        self.last_seq = ev.seq;
        Ok(())
    }
}

/// Rebuilds a session from its complete event list.
pub fn fold(events: &[Event]) -> Result<Folded, FoldError> {
    let first = events.first().ok_or(FoldError { seq: 0, reason: "empty event log".into() })?;
    let mut f = Folded::start(first)?;
    for ev in &events[1..] {
        f.apply(ev)?;
    }
    Ok(f)
}

/// `(subgroup, arm, count)` rows of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub subgroup: usize,
    pub arm: Arm,
    pub count: u64,
}

pub fn allocation_rows(u: &Allocation) -> Vec<AllocationRow> {
    (0..u.subgroup_count())
        .flat_map(|x| Arm::BOTH.map(|arm| AllocationRow { subgroup: x, arm, count: u.get(x, arm) }))
        .collect()
}
