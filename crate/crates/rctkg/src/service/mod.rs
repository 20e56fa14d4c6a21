//! HTTP + JSON trial service.
//!
//! Routes:
//!
//! | verb | path | |
//! |------|------|-|
//! | POST | `/trials` | create a session |
//! | GET  | `/trials/{id}` | summary |
//! | GET  | `/trials/{id}/recommendation` | pending or new cohort allocation |
//! | POST | `/trials/{id}/cohorts` | submit a cohort's outcomes |
//! | GET  | `/trials/{id}/export` | event log and report |
//! | GET  | `/healthz` | liveness |

pub mod api;
pub mod events;
pub mod store;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;

use api::{ApiError, CreateRequest, Export, OutcomeSubmission};
use store::{Recommendation, Store};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    /// When set, every route except `/healthz` needs `Authorization: Bearer <token>`.
    pub token: Option<Arc<str>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/recommendation", get(recommendation))
        .route("/trials/{id}/cohorts", post(submit))
        .route("/trials/{id}/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth))
        .route("/healthz", get(healthz))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route", json!({})) })
        .with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token", json!({}))
                .into_response();
        }
    }
    next.run(req).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            format!("malformed request body: {}", e.inner()),
            json!({ "path": path }),
        )
    })
}

/// Runs blocking store work (fsync, policy evaluation) off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let config = crate::config::parse_json_value(req.config).map_err(|e| {
        let path = if e.path.is_empty() || e.path == "." { "config".to_owned() } else { format!("config.{}", e.path) };
        ApiError::invalid("invalid_config", e.to_string(), json!({ "path": path }))
    })?;
    if config.trial.pilot.is_some() {
        return Err(ApiError::invalid(
            "invalid_config",
            "`pilot` draws simulated data and is only valid for simulations; give live pseudo-observations in `prior`",
            json!({ "path": "config.pilot" }),
        ));
    }
    let token = req.request_token.or_else(|| {
        headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_owned)
    });
    let store = state.store.clone();
    let (created, view) = blocking(move || {
        let created = store.create(config, token)?;
        let handle = store.session(&created.id)?;
        let view = api::summary(&handle.lock().expect("session lock").folded);
        Ok((created, view))
    })
    .await?;
    let code = if created.existed { StatusCode::OK } else { StatusCode::CREATED };
    Ok((code, Json(view)).into_response())
}

async fn get_trial(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<api::Summary>, ApiError> {
    let handle = state.store.session(&id)?;
    let view = api::summary(&handle.lock().expect("session lock").folded);
    Ok(Json(view))
}

async fn recommendation(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<api::RecommendationView>, ApiError> {
    let store = state.store.clone();
    blocking(move || {
        let rec = store.recommend(&id)?;
        let handle = store.session(&id)?;
        let s = handle.lock().expect("session lock");
        Ok(Json(match rec {
            Recommendation::Pending { seq, cohort_index, allocation } => {
                api::pending_view(&s.folded, seq, cohort_index, &allocation)
            }
            Recommendation::Complete => api::RecommendationView::Complete { id: id.clone(), report: api::report(&s.folded) },
        }))
    })
    .await
}

async fn submit(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<api::Summary>, ApiError> {
    let sub: OutcomeSubmission = parse_body(&body)?;
    let store = state.store.clone();
    blocking(move || {
        store.submit(&id, sub)?;
        let handle = store.session(&id)?;
        let view = api::summary(&handle.lock().expect("session lock").folded);
        Ok(Json(view))
    })
    .await
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Export>, ApiError> {
    let handle = state.store.session(&id)?;
    let s = handle.lock().expect("session lock");
    Ok(Json(Export {
        id: s.folded.id.clone(),
        config: s.folded.config.doc.clone(),
        events: s.events.clone(),
        report: api::report(&s.folded),
    }))
}

/// Periodically re-folds every session log from disk and reports sessions
/// whose in-memory state has drifted.
pub fn spawn_consistency_check(store: Arc<Store>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.tick().await;
        loop {
            tick.tick().await;
            let s = store.clone();
            if let Ok(bad) = tokio::task::spawn_blocking(move || s.verify_all()).await {
                for id in bad {
                    eprintln!("consistency check failed for session {id}");
                }
            }
        }
    })
}

/// Serves the API on `addr` until ctrl-c.
pub async fn serve(addr: &str, state: AppState, check_every: Option<Duration>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    if let Some(every) = check_every {
        spawn_consistency_check(state.store.clone(), every);
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
