//! The `/v1` HTTP API: jobs, spaces, advisor views, the event stream and
//! the worker-facing task endpoints.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use hopper_core::advisor::{importance, pairwise_marginal, project_2d, suggest_space, AdvisorError};
use hopper_core::space::{serialize_space, DiffEntry, SearchSpace, SpaceError};
use hopper_fabric::{BrokerError, TaskBroker, TaskKey, TaskOutcome, TaskState};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::report::{self, Format};
use crate::service::{Service, ServiceError, StreamEvent};
use crate::spec::JobSpec;
use crate::state::LogRecord;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = match &e {
            ServiceError::NotFound(_) | ServiceError::Space(SpaceError::NotFound { .. }) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::Space(SpaceError::VersionExists { .. }) => StatusCode::CONFLICT,
            ServiceError::Spec(_) | ServiceError::Space(_) | ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Halted => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError(code, e.to_string())
    }
}

impl From<AdvisorError> for ApiError {
    fn from(e: AdvisorError) -> Self {
        let code = match e {
            AdvisorError::InsufficientData { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            AdvisorError::UnknownPath(_) => StatusCode::BAD_REQUEST,
        };
        ApiError(code, e.to_string())
    }
}

impl From<BrokerError> for ApiError {
    fn from(e: BrokerError) -> Self {
        let code = match e {
            BrokerError::UnknownTask(_) => StatusCode::NOT_FOUND,
            BrokerError::DuplicateTask(_) => StatusCode::CONFLICT,
            BrokerError::Unreachable(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/v1/jobs", get(list_jobs).post(submit_job))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/jobs/{id}/spec", get(job_spec))
        .route("/v1/jobs/{id}/stop", post(stop_job))
        .route("/v1/jobs/{id}/candidates", get(candidates))
        .route("/v1/jobs/{id}/importance", get(job_importance))
        .route("/v1/jobs/{id}/projection", get(projection))
        .route("/v1/jobs/{id}/suggestion", get(suggestion))
        .route("/v1/jobs/{id}/marginal", get(marginal))
        .route("/v1/jobs/{id}/space", post(rebind))
        .route("/v1/jobs/{id}/report", get(job_report))
        .route("/v1/jobs/{id}/events", get(events))
        .route("/v1/spaces", get(list_spaces).post(create_space))
        .route("/v1/spaces/{id}", get(get_space))
        .route("/v1/spaces/{id}/versions", get(space_versions).post(edit_space))
        .route("/v1/spaces/{id}/versions/{version}", get(space_version))
        .route("/v1/spaces/{id}/diff", get(space_diff))
        .route("/v1/tasks/reserve", post(reserve))
        .route("/v1/tasks/start", post(start))
        .route("/v1/tasks/heartbeat", post(heartbeat))
        .route("/v1/tasks/report", post(report_task))
        .with_state(service)
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn_server(service: Service, addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, router(service)).await;
    });
    Ok(local)
}

async fn list_jobs(State(s): State<Service>) -> Json<serde_json::Value> {
    let jobs: Vec<_> = s.read(|st| {
        let mut ids: Vec<_> = st.jobs.values().map(|j| (j.meta.number, j.meta.id.clone())).collect();
        ids.sort();
        ids.into_iter().filter_map(|(_, id)| st.summary(&id)).collect()
    });
    Json(json!({ "jobs": jobs }))
}

async fn submit_job(State(s): State<Service>, body: String) -> ApiResult<Response> {
    let spec = JobSpec::parse(&body).map_err(|e| bad(e.to_string()))?;
    let (summary, created) = blocking(move || s.submit(spec)).await??;
    let code = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((code, Json(summary)).into_response())
}

async fn get_job(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.summary(&id)?).into_response())
}

async fn job_spec(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    s.read(|st| {
        st.jobs
            .get(&id)
            .map(|j| Json(json!({ "spec": j.meta.spec, "rationale": j.meta.rationale, "estimated_duration": j.meta.estimated_duration })))
    })
    .ok_or_else(|| ServiceError::NotFound(format!("job {id}")).into())
}

async fn stop_job(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok((StatusCode::ACCEPTED, Json(s.stop(&id)?)).into_response())
}

#[derive(Deserialize)]
struct CandidateQuery {
    state: Option<String>,
    limit: Option<usize>,
    /// `task` (default) or `reward`, best first.
    order: Option<String>,
}

async fn candidates(State(s): State<Service>, Path(id): Path<String>, Query(q): Query<CandidateQuery>) -> ApiResult<Response> {
    s.summary(&id)?;
    let filter = match q.state.as_deref() {
        None => None,
        Some(v) => Some(
            serde_json::from_value::<TaskState>(json!(v.to_ascii_uppercase())).map_err(|_| bad(format!("unknown state `{v}`")))?,
        ),
    };
    let mut rows = s.read(|st| st.candidates(&id));
    rows.retain(|c| filter.is_none_or(|f| c.state == f));
    match q.order.as_deref() {
        None | Some("task") => {}
        Some("reward") => rows.sort_by(|a, b| a.loss.unwrap_or(f64::INFINITY).total_cmp(&b.loss.unwrap_or(f64::INFINITY))),
        Some(o) => return Err(bad(format!("unknown order `{o}`"))),
    }
    if let Some(n) = q.limit {
        rows.truncate(n);
    }
    Ok(Json(json!({ "candidates": rows })).into_response())
}

/// Observations of the job and the space version it currently searches.
fn analysis_input(s: &Service, id: &str) -> ApiResult<(Vec<hopper_core::strategy::Observation>, std::sync::Arc<SearchSpace>, u64)> {
    let summary = s.summary(id)?;
    let seed = s.read(|st| st.jobs.get(id).map(|j| j.meta.spec.seed).unwrap_or(0));
    let space = s.spaces().get(&summary.space_id, summary.space_version).map_err(ServiceError::from)?;
    Ok((s.read(|st| st.observations(id)), space, seed))
}

async fn job_importance(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    let report = blocking(move || {
        let (obs, space, seed) = analysis_input(&s, &id)?;
        Ok::<_, ApiError>(importance(&obs, &space, seed)?)
    })
    .await??;
    Ok(Json(report).into_response())
}

async fn projection(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    let points = blocking(move || {
        let (obs, space, _) = analysis_input(&s, &id)?;
        Ok::<_, ApiError>(project_2d(&obs, &space)?)
    })
    .await??;
    Ok(Json(json!({ "points": points })).into_response())
}

#[derive(Deserialize)]
struct SuggestionQuery {
    quantile: Option<f64>,
}

async fn suggestion(State(s): State<Service>, Path(id): Path<String>, Query(q): Query<SuggestionQuery>) -> ApiResult<Response> {
    let quantile = q.quantile.unwrap_or(0.25);
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(bad("quantile must be in (0, 1]"));
    }
    let out = blocking(move || {
        let (obs, space, _) = analysis_input(&s, &id)?;
        Ok::<_, ApiError>(suggest_space(&obs, &space, quantile)?)
    })
    .await??;
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
struct MarginalQuery {
    a: String,
    b: String,
    grid: Option<usize>,
}

async fn marginal(State(s): State<Service>, Path(id): Path<String>, Query(q): Query<MarginalQuery>) -> ApiResult<Response> {
    let grid = q.grid.unwrap_or(10);
    if !(2..=100).contains(&grid) {
        return Err(bad("grid must be between 2 and 100"));
    }
    let out = blocking(move || {
        let (obs, space, seed) = analysis_input(&s, &id)?;
        Ok::<_, ApiError>(pairwise_marginal(&obs, &space, &q.a, &q.b, grid, seed)?)
    })
    .await??;
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
struct RebindBody {
    version: u64,
}

async fn rebind(State(s): State<Service>, Path(id): Path<String>, Json(body): Json<RebindBody>) -> ApiResult<Response> {
    s.rebind(&id, body.version)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": id, "version": body.version }))).into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn job_report(State(s): State<Service>, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let format: Format = q.format.as_deref().unwrap_or("document").parse().map_err(bad)?;
    let body = s
        .read(|st| report::render(st, &id, format))
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, e.to_string()))?;
    let ctype = match format {
        Format::Text => "text/plain; charset=utf-8",
        Format::Document => "application/json",
        Format::Csv => "text/csv",
    };
    Ok(([(axum::http::header::CONTENT_TYPE, ctype)], body).into_response())
}

fn is_terminal(e: &StreamEvent) -> bool {
    matches!(
        serde_json::from_value::<LogRecord>(e.data.clone()),
        Ok(LogRecord::JobStatus { status, .. }) if status.is_terminal()
    )
}

fn to_sse(e: &StreamEvent) -> Event {
    Event::default()
        .id(e.id.to_string())
        .event(e.kind.clone())
        .json_data(&e.data)
        .unwrap_or_else(|_| Event::default().id(e.id.to_string()).event("error"))
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

/// Replays the job's history after `Last-Event-ID` (or `?after=`), then
/// follows live; ends after the job's terminal status.
async fn events(
    State(s): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let summary = s.summary(&id)?;
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .or(q.after)
        .unwrap_or(0);
    let rx = s.subscribe();
    let backlog: VecDeque<StreamEvent> = s.history(&id, after).into();
    let finished = summary.status.is_terminal() && backlog.is_empty();
    let init = (backlog, rx, after, finished);
    let stream = stream::unfold(init, move |(mut queue, mut rx, mut last, mut done)| {
        let s = s.clone();
        let id = id.clone();
        async move {
            loop {
                if let Some(e) = queue.pop_front() {
                    if e.id <= last {
                        continue;
                    }
                    last = e.id;
                    done |= is_terminal(&e);
                    return Some((Ok(to_sse(&e)), (queue, rx, last, done)));
                }
                if done {
                    return None;
                }
                match rx.recv().await {
                    Ok(e) if e.job == id => queue.push_back(e),
                    Ok(_) => {}
                    Err(RecvError::Lagged(_)) => queue.extend(s.history(&id, last)),
                    Err(RecvError::Closed) => return None,
                }
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Serialize)]
struct SpaceBody<'a> {
    id: &'a str,
    version: u64,
    parent_version: Option<u64>,
    note: &'a str,
    size: Option<f64>,
    text: String,
    space: &'a SearchSpace,
}

fn space_body(space: &SearchSpace) -> serde_json::Value {
    serde_json::to_value(SpaceBody {
        id: &space.id,
        version: space.version,
        parent_version: space.parent_version,
        note: &space.note,
        size: space.size(),
        text: serialize_space(space),
        space,
    })
    .expect("space serializes")
}

async fn list_spaces(State(s): State<Service>) -> Json<serde_json::Value> {
    let spaces: Vec<_> = s
        .spaces()
        .ids()
        .into_iter()
        .filter_map(|id| s.spaces().head(&id))
        .map(|h| json!({ "id": h.id, "head": h.version, "size": h.size() }))
        .collect();
    Json(json!({ "spaces": spaces }))
}

#[derive(Deserialize)]
struct NewSpace {
    id: String,
    text: String,
}

async fn create_space(State(s): State<Service>, Json(body): Json<NewSpace>) -> ApiResult<Response> {
    let space = s.create_space(&body.id, &body.text)?;
    Ok((StatusCode::CREATED, Json(space_body(&space))).into_response())
}

async fn get_space(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    let head = s.spaces().head(&id).ok_or_else(|| ServiceError::NotFound(format!("space {id}")))?;
    Ok(Json(space_body(&head)).into_response())
}

async fn space_versions(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    let history = s.spaces().history(&id);
    if history.is_empty() {
        return Err(ServiceError::NotFound(format!("space {id}")).into());
    }
    let versions: Vec<_> = history
        .iter()
        .map(|v| json!({ "version": v.version, "parent_version": v.parent_version, "note": v.note, "size": v.size() }))
        .collect();
    Ok(Json(json!({ "id": id, "versions": versions })).into_response())
}

async fn space_version(State(s): State<Service>, Path((id, version)): Path<(String, u64)>) -> ApiResult<Response> {
    let space = s.spaces().get(&id, version).map_err(ServiceError::from)?;
    Ok(Json(space_body(&space)).into_response())
}

#[derive(Deserialize)]
struct EditBody {
    base: u64,
    edits: Vec<DiffEntry>,
    #[serde(default)]
    note: String,
}

async fn edit_space(State(s): State<Service>, Path(id): Path<String>, Json(body): Json<EditBody>) -> ApiResult<Response> {
    let space = s.edit_space(&id, body.base, &body.edits, &body.note)?;
    Ok((StatusCode::CREATED, Json(space_body(&space))).into_response())
}

#[derive(Deserialize)]
struct DiffQuery {
    from: u64,
    to: u64,
}

async fn space_diff(State(s): State<Service>, Path(id): Path<String>, Query(q): Query<DiffQuery>) -> ApiResult<Response> {
    let diff = s.spaces().diff(&id, q.from, q.to).map_err(ServiceError::from)?;
    Ok(Json(diff).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReserveBody {
    pub worker: String,
    #[serde(default)]
    pub job: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaseBody {
    pub key: TaskKey,
    pub worker: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBody {
    pub key: TaskKey,
    pub worker: String,
    pub outcome: TaskOutcome,
}

async fn reserve(State(s): State<Service>, Json(body): Json<ReserveBody>) -> ApiResult<Response> {
    let view = blocking(move || s.broker().reserve(&body.worker, body.job.as_deref())).await??;
    Ok(match view {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn start(State(s): State<Service>, Json(body): Json<LeaseBody>) -> ApiResult<Response> {
    let ok = blocking(move || s.broker().start(&body.key, &body.worker)).await??;
    Ok(Json(json!({ "ok": ok })).into_response())
}

async fn heartbeat(State(s): State<Service>, Json(body): Json<LeaseBody>) -> ApiResult<Response> {
    let ok = blocking(move || s.broker().heartbeat(&body.key, &body.worker)).await??;
    Ok(Json(json!({ "ok": ok })).into_response())
}

async fn report_task(State(s): State<Service>, Json(body): Json<ReportBody>) -> ApiResult<Response> {
    let ack = blocking(move || s.broker().report(&body.key, &body.worker, body.outcome)).await??;
    Ok(Json(json!({ "ack": ack })).into_response())
}
