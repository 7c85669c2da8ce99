//! HTTP/JSON interface over a shared [`Store`].

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;
use tower_http::cors::CorsLayer;
use travista::model::ValidationReport;
use travista::store::{AggregateParams, Store, StoreError, TraceOrder, MAX_PAGE};

pub const DEFAULT_PAGE: usize = 100;
pub const DEFAULT_MAX_BODY_MB: usize = 64;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
}

pub fn router(store: Arc<Store>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/traces", post(ingest).get(list))
        .route("/api/trace/{id}", get(trace))
        .route("/api/trace/{id}/aggregates", get(aggregates))
        .route("/api/tasktype/{name}/histogram", get(histogram))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .layer(CorsLayer::permissive())
        .with_state(AppState { store })
}

/// Error body: `{"code": ..., "message": ..., "report"?: ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    report: Option<ValidationReport>,
}

impl ApiError {
    fn bad_param(message: String) -> ApiError {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "INVALID_PARAM".into(),
            message,
            report: None,
        }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "NOT_FOUND" | "UNKNOWN_TYPE" => StatusCode::NOT_FOUND,
        "DUPLICATE_TRACE" => StatusCode::CONFLICT,
        "INVALID_PARAM" | "INVALID_BINS" | "INVALID_THRESHOLD" | "PARSE_ERROR" => {
            StatusCode::BAD_REQUEST
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = e.code().to_string();
        let message = e.to_string();
        match e {
            StoreError::Invalid(report) => ApiError {
                status: StatusCode::BAD_REQUEST,
                code,
                message,
                report: Some(report),
            },
            _ => ApiError {
                status: status_for(&code),
                code,
                message,
                report: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(report) = self.report {
            body["report"] = serde_json::to_value(report).expect("report serializes");
        }
        (self.status, Json(body)).into_response()
    }
}

type Params = Query<HashMap<String, String>>;

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str, default: T) -> Result<T, ApiError> {
    match q.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| ApiError::bad_param(format!("cannot parse {key}={raw:?}"))),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    traces: u64,
    tasks: u64,
    events: u64,
    task_types: u64,
    processes: u64,
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    let stats = s.store.snapshot().stats();
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        traces: stats.traces,
        tasks: stats.tasks,
        events: stats.events,
        task_types: stats.task_types,
        processes: stats.processes,
    })
}

/// Runs store work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, StoreError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "INTERNAL".into(),
            message: e.to_string(),
            report: None,
        })?
        .map_err(ApiError::from)
}

async fn ingest(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let store = s.store.clone();
    let (receipt, report) = blocking(move || store.ingest_document(&body)).await?;
    let body = json!({
        "trace_id": receipt.trace_id,
        "preprocessing_us": receipt.preprocessing_us,
        "warnings": report.warnings,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list(State(s): State<AppState>, Query(q): Params) -> Result<Response, ApiError> {
    let offset = param(&q, "offset", 0usize)?;
    let limit = param(&q, "limit", DEFAULT_PAGE)?;
    let order = match q.get("order").map(String::as_str) {
        None | Some("start_ts") => TraceOrder::StartTs,
        Some("duration") => TraceOrder::Duration,
        Some(other) => {
            return Err(ApiError::bad_param(format!(
                "order must be start_ts or duration, got {other:?}"
            )))
        }
    };
    if limit > MAX_PAGE {
        return Err(ApiError::bad_param(format!("limit must be at most {MAX_PAGE}")));
    }
    let snap = s.store.snapshot();
    let traces = snap.list_traces(offset, limit, order)?;
    Ok(Json(json!({
        "total": snap.stats().traces,
        "offset": offset,
        "limit": limit,
        "order": order,
        "traces": traces,
    }))
    .into_response())
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        bytes,
    )
        .into_response()
}

async fn trace(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = s.store.snapshot();
    Ok(json_bytes(snap.get_trace(&id)?.to_canonical_json()))
}

pub fn aggregate_params(q: &HashMap<String, String>) -> Result<AggregateParams, ApiError> {
    let d = AggregateParams::default();
    let params = AggregateParams {
        bins: param(q, "bins", d.bins)?,
        threshold: param(q, "threshold", d.threshold)?,
        rarity_cutoff: param(q, "rarity_cutoff", d.rarity_cutoff)?,
    };
    params.validate()?;
    Ok(params)
}

/// The payload plus an `x-serialization-us` header; the payload's own
/// timings cover only the query phases.
async fn aggregates(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Params,
) -> Result<Response, ApiError> {
    let params = aggregate_params(&q)?;
    let snap = s.store.snapshot();
    let (payload, _) = blocking(move || snap.load_trace_aggregates(&id, params)).await?;
    let started = Instant::now();
    let bytes = serde_json::to_vec(&payload).expect("payload serializes");
    let took = started.elapsed().as_nanos() as f64 / 1_000.0;
    let mut resp = json_bytes(bytes);
    resp.headers_mut().insert(
        "x-serialization-us",
        HeaderValue::from_str(&format!("{took:.1}")).expect("ascii header"),
    );
    Ok(resp)
}

async fn histogram(
    State(s): State<AppState>,
    Path(name): Path<String>,
    Query(q): Params,
) -> Result<Response, ApiError> {
    let bins = param(&q, "bins", AggregateParams::default().bins)?;
    Ok(Json(s.store.snapshot().histogram(&name, bins)?).into_response())
}
