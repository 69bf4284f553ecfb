//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::executor::Executor;
use super::store::{DatasetUpload, RunRecord, RunStatus, Store, TaxonomyUpload};
use crate::error::Error;
use crate::pipeline::parse_json;
use crate::riskeval::{default_window, exposure_shares, series_csv, ExposureShareSeries, ReportOptions};
use crate::simulate::{ExposureLog, SimulationConfig};
use crate::synthgen::{make_marginal_pair, CohortSpec};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub executor: Arc<Executor>,
}

pub enum ApiError {
    Core(Error),
    QueueFull,
    NotReady { run_id: String, status: RunStatus },
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Core(e) => {
                let status = match &e {
                    Error::Validation { .. } | Error::Parse { .. } | Error::EmptyLog => StatusCode::BAD_REQUEST,
                    Error::Unknown { .. } => StatusCode::NOT_FOUND,
                    Error::Duplicate { .. } | Error::Conflict(_) => StatusCode::CONFLICT,
                    Error::Io { .. } | Error::Runtime(_) => StatusCode::INTERNAL_SERVER_ERROR,
                };
                let mut body = json!({ "error": e.to_string() });
                match &e {
                    Error::Validation { field, .. } => body["field"] = json!(field),
                    Error::Unknown { id, .. } | Error::Duplicate { id, .. } => body["id"] = json!(id),
                    _ => {}
                }
                (status, body)
            }
            ApiError::QueueFull => (
                StatusCode::SERVICE_UNAVAILABLE,
                json!({ "error": "run queue is full, retry later" }),
            ),
            ApiError::NotReady { run_id, status } => (
                StatusCode::CONFLICT,
                json!({
                    "error": format!("run `{run_id}` has no artifacts (status {})", json!(status).as_str().unwrap_or("?")),
                    "id": run_id,
                    "status": status,
                }),
            ),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn body<T: serde::de::DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::validation("body", "request body is not utf-8"))?;
    if text.trim().is_empty() {
        return Err(Error::validation("body", "request body is empty").into());
    }
    Ok(parse_json(text, "")?)
}

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Core(Error::Runtime(format!("worker task failed: {e}"))))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/datasets", post(create_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/taxonomies", post(create_taxonomy).get(list_taxonomies))
        .route("/taxonomies/{id}", get(get_taxonomy))
        .route("/cohorts", post(create_cohort).get(list_cohorts))
        .route("/cohorts/{id}", get(get_cohort))
        .route("/cohorts/{id}/marginal-pair", post(create_marginal_pair))
        .route("/runs", post(submit_run).get(list_runs))
        .route("/runs/{id}", get(get_run).delete(delete_run))
        .route("/runs/{id}/report", get(get_report))
        .route("/runs/{id}/log", get(get_log))
        .route("/runs/{id}/timeseries", get(get_timeseries))
        .with_state(state)
}

async fn create_dataset(State(s): State<AppState>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let up: DatasetUpload = body(&raw)?;
    let info = blocking(move || Ok(s.store.add_dataset(&up)?)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_datasets(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "datasets": s.store.datasets()? })))
}

async fn get_dataset(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.dataset(&id)?))
}

async fn create_taxonomy(State(s): State<AppState>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let up: TaxonomyUpload = body(&raw)?;
    let info = blocking(move || Ok(s.store.add_taxonomy(&up)?)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_taxonomies(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "taxonomies": s.store.taxonomies()? })))
}

async fn get_taxonomy(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.taxonomy(&id)?))
}

async fn create_cohort(State(s): State<AppState>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let spec: CohortSpec = body(&raw)?;
    s.store.add_cohorts(std::slice::from_ref(&spec))?;
    Ok((StatusCode::CREATED, Json(spec)))
}

async fn list_cohorts(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "cohorts": s.store.cohorts()? })))
}

async fn get_cohort(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.cohort(&id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginalPairRequest {
    target: String,
    delta: f64,
    /// When given, `target` is checked against this stored taxonomy.
    #[serde(default)]
    taxonomy: Option<String>,
}

#[derive(Serialize)]
struct MarginalPairResponse {
    ctrl: CohortSpec,
    perturbed: CohortSpec,
}

async fn create_marginal_pair(
    State(s): State<AppState>,
    Path(id): Path<String>,
    raw: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: MarginalPairRequest = body(&raw)?;
    let base = s.store.cohort(&id)?;
    if let Some(t) = &req.taxonomy {
        let tax = s
            .store
            .taxonomy(t)
            .map_err(|_| Error::validation("taxonomy", format!("unknown taxonomy `{t}`")))?;
        if tax.categories.index_of(&req.target).is_none() {
            return Err(Error::validation("target", format!("`{}` is not in taxonomy `{t}`", req.target)).into());
        }
    }
    let (ctrl, perturbed) = make_marginal_pair(&base, &req.target, req.delta)?;
    s.store.add_cohorts(&[ctrl.clone(), perturbed.clone()])?;
    Ok((StatusCode::CREATED, Json(MarginalPairResponse { ctrl, perturbed })))
}

/// A run over stored inputs. Cohorts named in `cohorts` are appended to any
/// given inline in `simulation.cohorts`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub dataset: String,
    pub taxonomy: String,
    #[serde(default)]
    pub cohorts: Vec<String>,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

async fn submit_run(State(s): State<AppState>, raw: Bytes) -> ApiResult<impl IntoResponse> {
    let req: RunRequest = body(&raw)?;
    let mut sim = req.simulation;
    for (i, name) in req.cohorts.iter().enumerate() {
        let spec = s
            .store
            .cohort(name)
            .map_err(|_| Error::validation(format!("cohorts[{i}]"), format!("unknown cohort `{name}`")))?;
        sim.cohorts.push(spec);
    }
    let store = Arc::clone(&s.store);
    let record = blocking(move || {
        let config = store.resolve_run(&req.dataset, &req.taxonomy, sim, req.report)?;
        Ok(store.create_run(&req.dataset, &req.taxonomy, &config)?)
    })
    .await?;
    if s.executor.submit(record.run_id.clone()).is_err() {
        let _ = s.store.delete_run(&record.run_id);
        return Err(ApiError::QueueFull);
    }
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": record.run_id, "status": record.status })),
    ))
}

async fn list_runs(State(s): State<AppState>) -> Json<Vec<RunRecord>> {
    Json(s.store.runs())
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RunRecord>> {
    Ok(Json(s.store.run(&id)?))
}

async fn delete_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let store = Arc::clone(&s.store);
    blocking(move || Ok(store.delete_run(&id)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

fn done_run(store: &Store, id: &str) -> ApiResult<RunRecord> {
    let r = store.run(id)?;
    if r.status != RunStatus::Done {
        return Err(ApiError::NotReady { run_id: id.to_string(), status: r.status });
    }
    Ok(r)
}

async fn get_report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    done_run(&s.store, &id)?;
    let bytes = s.store.read_artifact(&id, "report.json")?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn get_log(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    done_run(&s.store, &id)?;
    let bytes = s.store.read_artifact(&id, "log.jsonl")?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeseriesQuery {
    cohort: Option<String>,
    window: Option<usize>,
    format: Option<String>,
}

#[derive(Serialize)]
struct TimeseriesResponse {
    run_id: String,
    window: usize,
    series: Vec<ExposureShareSeries>,
}

async fn get_timeseries(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TimeseriesQuery>,
) -> ApiResult<Response> {
    done_run(&s.store, &id)?;
    let csv = match q.format.as_deref() {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => {
            return Err(Error::validation("format", format!("`{other}` is not json or csv")).into())
        }
    };
    let store = Arc::clone(&s.store);
    blocking(move || {
        let log = ExposureLog::from_jsonl_bytes(&store.read_artifact(&id, "log.jsonl")?)?;
        let window = q.window.unwrap_or_else(|| {
            store
                .read_artifact(&id, "report.json")
                .ok()
                .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
                .and_then(|v| v["metadata"]["window"].as_u64())
                .map_or_else(|| default_window(log.header.steps), |w| w as usize)
        });
        let names: Vec<String> = match &q.cohort {
            Some(c) => vec![c.clone()],
            None => log.header.cohorts.iter().map(|c| c.name.clone()).collect(),
        };
        let series = names
            .iter()
            .map(|n| exposure_shares(&log, n, window))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Validation { message, .. } => Error::validation("window", message),
                Error::Unknown { kind, id } => Error::validation(kind, format!("unknown {kind} `{id}`")),
                other => other,
            })?;
        Ok(if csv {
            ([(header::CONTENT_TYPE, "text/csv")], series_csv(&series)).into_response()
        } else {
            Json(TimeseriesResponse { run_id: id, window, series }).into_response()
        })
    })
    .await
}
