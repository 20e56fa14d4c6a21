//! Request and response bodies of the HTTP API (see `docs/api.md`).

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rctkg_core::{Allocation, Arm};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::events::{allocation_rows, AllocationRow, Event, Folded, Snapshot};
use crate::config::ConfigDoc;

/// Error body `{code, message, details}` with an HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>, details: Value) -> Self {
        Self { status, code, message: message.into(), details }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no trial with id `{id}`"), json!({ "id": id }))
    }

    pub fn invalid(code: &'static str, message: impl Into<String>, details: Value) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message, details)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>, details: Value) -> Self {
        Self::new(StatusCode::CONFLICT, code, message, details)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, json!({}))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, json!({}))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

/// `POST /trials` body.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub request_token: Option<String>,
    pub config: Value,
}

/// `POST /trials/{id}/cohorts` body: the patients actually enrolled per
/// (subgroup, arm) as `[control, treatment]` pairs, and their successes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSubmission {
    pub cohort_index: u32,
    pub enrolled: Vec<[u64; 2]>,
    pub successes: Vec<[u64; 2]>,
    /// Marks a cohort in which nobody was enrolled.
    #[serde(default)]
    pub skipped: bool,
    /// Permits enrolling more than the configured cohort size.
    #[serde(default)]
    pub override_cohort_size: bool,
    /// Optimistic-concurrency guard: the `last_event_seq` the client saw.
    #[serde(default)]
    pub expected_seq: Option<u64>,
}

impl OutcomeSubmission {
    pub fn validate(&self, f: &Folded) -> Result<(), ApiError> {
        if let Some(seq) = self.expected_seq {
            if seq != f.last_seq {
                return Err(ApiError::conflict(
                    "sequence_conflict",
                    format!("session moved on to event {} (client saw {seq})", f.last_seq),
                    json!({ "last_event_seq": f.last_seq, "expected_seq": seq }),
                ));
            }
        }
        if f.is_complete() {
            return Err(ApiError::conflict(
                "trial_complete",
                "the trial has no cohorts left",
                json!({ "cohort_index": f.cohort_index }),
            ));
        }
        if self.cohort_index != f.cohort_index {
            let conflicting = f.closed_by.get(self.cohort_index as usize).copied();
            return Err(ApiError::conflict(
                "stale_submission",
                format!("outcomes for cohort {} but the session expects cohort {}", self.cohort_index, f.cohort_index),
                json!({
                    "expected_cohort_index": f.cohort_index,
                    "conflicting_event_seq": conflicting,
                    "last_event_seq": f.last_seq,
                }),
            ));
        }
        let x = f.subgroups();
        for (name, v) in [("enrolled", &self.enrolled), ("successes", &self.successes)] {
            if v.len() != x {
                return Err(ApiError::invalid(
                    "invalid_outcomes",
                    format!("`{name}` needs {x} [control, treatment] pairs, got {}", v.len()),
                    json!({ "field": name }),
                ));
            }
        }
        for sg in 0..x {
            for arm in Arm::BOTH {
                let (w, n) = (self.successes[sg][arm.index()], self.enrolled[sg][arm.index()]);
                if w > n {
                    return Err(ApiError::invalid(
                        "invalid_outcomes",
                        format!("subgroup {sg} {}: {w} successes exceed {n} enrolled", arm.as_str()),
                        json!({ "subgroup": sg, "arm": arm, "successes": w, "enrolled": n }),
                    ));
                }
            }
        }
        let total: u64 = self.enrolled.iter().map(|c| c[0] + c[1]).sum();
        let m = f.config.trial.cohort_size;
        if total > m && !self.override_cohort_size {
            return Err(ApiError::invalid(
                "invalid_outcomes",
                format!("{total} patients enrolled exceed the cohort size {m}; set override_cohort_size to accept"),
                json!({ "enrolled_total": total, "cohort_size": m }),
            ));
        }
        if total == 0 && !self.skipped {
            return Err(ApiError::invalid(
                "empty_cohort",
                "nobody was enrolled; resubmit with skipped = true to close the cohort",
                json!({}),
            ));
        }
        if total > 0 && self.skipped {
            return Err(ApiError::invalid(
                "invalid_outcomes",
                "a skipped cohort cannot enroll patients",
                json!({ "enrolled_total": total }),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StateRow {
    pub subgroup: usize,
    pub arm: Arm,
    pub stat: f64,
    pub count: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubgroupView {
    pub subgroup: usize,
    pub prob_effective: f64,
    /// Posterior mean success probability, `[control, treatment]`.
    pub posterior_mean: [f64; 2],
    pub recruited: [u64; 2],
    pub estimated_effective: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PendingView {
    pub event_seq: u64,
    pub cohort_index: u32,
    pub counts: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub id: String,
    pub status: &'static str,
    pub config: ConfigDoc,
    pub cohort_index: u32,
    pub cohorts: u32,
    pub cohort_size: u64,
    pub state: Vec<StateRow>,
    pub subgroups: Vec<SubgroupView>,
    pub prob_effective: Vec<f64>,
    pub expected_total_error: f64,
    pub estimated_effective: Vec<usize>,
    pub pending_recommendation: Option<PendingView>,
    pub last_event_seq: u64,
}

pub fn status(f: &Folded) -> &'static str {
    if f.is_complete() {
        "complete"
    } else {
        "active"
    }
}

pub fn summary(f: &Folded) -> Summary {
    let est = f.estimated_effective();
    let probs = f.prob_effective().to_vec();
    let state = f
        .state
        .quadruples()
        .into_iter()
        .map(|(subgroup, arm, stat, count)| StateRow { subgroup, arm, stat, count })
        .collect();
    let subgroups = (0..f.subgroups())
        .map(|x| SubgroupView {
            subgroup: x,
            prob_effective: probs[x],
            posterior_mean: [
                f.state.get(x, Arm::Control).posterior_mean(),
                f.state.get(x, Arm::Treatment).posterior_mean(),
            ],
            recruited: f.recruitment[x],
            estimated_effective: est.contains(&x),
        })
        .collect();
    Summary {
        id: f.id.clone(),
        status: status(f),
        config: f.config.doc.clone(),
        cohort_index: f.cohort_index,
        cohorts: f.config.trial.cohorts,
        cohort_size: f.config.trial.cohort_size,
        state,
        subgroups,
        prob_effective: probs,
        expected_total_error: f.expected_total_error(),
        estimated_effective: est,
        pending_recommendation: f.pending.as_ref().map(|(seq, u)| PendingView {
            event_seq: *seq,
            cohort_index: f.cohort_index,
            counts: u.counts().to_vec(),
        }),
        last_event_seq: f.last_seq,
    }
}

/// Final or interim classification report.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub status: &'static str,
    pub cohort_index: u32,
    pub estimated_effective: Vec<usize>,
    pub prob_effective: Vec<f64>,
    pub expected_total_error: f64,
    pub recruitment: Vec<[u64; 2]>,
    pub history: Vec<Snapshot>,
}

pub fn report(f: &Folded) -> Report {
    Report {
        status: status(f),
        cohort_index: f.cohort_index,
        estimated_effective: f.estimated_effective(),
        prob_effective: f.prob_effective().to_vec(),
        expected_total_error: f.expected_total_error(),
        recruitment: f.recruitment.clone(),
        history: f.history.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecommendationView {
    Pending {
        id: String,
        cohort_index: u32,
        event_seq: u64,
        allocation: Vec<AllocationRow>,
        counts: Vec<[u64; 2]>,
        prob_effective: Vec<f64>,
        expected_total_error: f64,
    },
    Complete {
        id: String,
        report: Report,
    },
}

pub fn pending_view(f: &Folded, seq: u64, cohort_index: u32, u: &Allocation) -> RecommendationView {
    RecommendationView::Pending {
        id: f.id.clone(),
        cohort_index,
        event_seq: seq,
        allocation: allocation_rows(u),
        counts: u.counts().to_vec(),
        prob_effective: f.prob_effective().to_vec(),
        expected_total_error: f.expected_total_error(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Export {
    pub id: String,
    pub config: ConfigDoc,
    pub events: Vec<Event>,
    pub report: Report,
}
