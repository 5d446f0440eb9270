//! HTTP API under `/api/v1`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use ivg_core::layout::{GroupingMode, StageOverride};
use ivg_core::{session_stages, BuildError, BuildParams};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::engine::{Engine, EngineError};
use crate::gateway::{Gateway, GenerationRequest};
use crate::store::{NewStep, StepRecord, StoreError};

pub const DEFAULT_IMAGE_SIZE: u32 = 512;
pub const DEFAULT_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub session_id: String,
    pub status: JobStatus,
    pub request: GenerationRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<StepRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_after_secs: Option<u64>,
    pub created_at: DateTime<Utc>,
}

pub struct AppState {
    pub engine: Arc<Engine>,
    pub gateway: Gateway,
    /// Defaults for graph parameters the request leaves out.
    pub defaults: BuildParams,
    jobs: Mutex<HashMap<String, Job>>,
    queues: Mutex<HashMap<String, mpsc::UnboundedSender<(String, GenerationRequest)>>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, gateway: Gateway, defaults: BuildParams) -> Arc<Self> {
        Arc::new(AppState {
            engine,
            gateway,
            defaults,
            jobs: Mutex::new(HashMap::new()),
            queues: Mutex::new(HashMap::new()),
        })
    }

    /// Hands a job to the session's worker, starting one if needed. Each
    /// worker runs its jobs one at a time in submission order.
    fn enqueue(self: &Arc<Self>, session_id: &str, job_id: String, request: GenerationRequest) {
        let mut queues = self.queues.lock().unwrap();
        let tx = queues.entry(session_id.to_owned()).or_insert_with(|| {
            let (tx, mut rx) = mpsc::unbounded_channel::<(String, GenerationRequest)>();
            let state = self.clone();
            let sid = session_id.to_owned();
            tokio::spawn(async move {
                while let Some((job_id, request)) = rx.recv().await {
                    state.run_job(&sid, &job_id, request).await;
                }
            });
            tx
        });
        tx.send((job_id, request)).expect("session worker is alive");
    }

    async fn run_job(&self, session_id: &str, job_id: &str, request: GenerationRequest) {
        let outcome = match self.gateway.generate(&request).await {
            Ok(images) => {
                let store = self.engine.store.clone();
                let step = NewStep {
                    prompt: request.prompt.clone(),
                    seed: request.seed,
                    model: self.gateway.backend.model_tag(),
                    images,
                    created_at: None,
                };
                let sid = session_id.to_owned();
                match tokio::task::spawn_blocking(move || store.append_step(&sid, step)).await {
                    Ok(Ok(record)) => Ok(record),
                    Ok(Err(e)) => Err((e.to_string(), None)),
                    Err(e) => Err((e.to_string(), None)),
                }
            }
            Err(e) => Err((e.to_string(), e.retry_after())),
        };
        self.update_job(job_id, |job| match outcome {
            Ok(record) => {
                job.status = JobStatus::Completed;
                job.step = Some(record);
            }
            Err((message, retry_after)) => {
                tracing::warn!(job = %job.id, %message, "generation failed");
                job.status = JobStatus::Failed;
                job.error = Some(message);
                job.retry_after_secs = retry_after.map(|d| d.as_secs());
            }
        });
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(id) {
            f(job);
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownSession(_) | StoreError::UnknownAsset(_) => StatusCode::NOT_FOUND,
            StoreError::InvalidImage { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            EngineError::Build(BuildError::InvalidParam { .. }) => ApiError::invalid(e.to_string()),
            EngineError::Embed(_) => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(|| async { Json(serde_json::json!({ "ok": true })) }))
        .route("/api/v1/sessions", get(list_sessions).post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/graph", get(get_graph))
        .route("/api/v1/sessions/{id}/history", get(get_history))
        .route("/api/v1/sessions/{id}/stages", get(get_stages).patch(patch_stages))
        .route("/api/v1/sessions/{id}/generate", post(post_generate))
        .route("/api/v1/sessions/{id}/jobs", get(list_jobs))
        .route("/api/v1/sessions/{id}/assets/{file}", get(get_asset))
        .route("/api/v1/jobs/{id}", get(get_job))
        .with_state(state)
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.engine.store.list_sessions())
}

#[derive(Deserialize, Default)]
struct CreateSession {
    #[serde(default)]
    title: String,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<impl IntoResponse> {
    let title = body.map(|b| b.0.title).unwrap_or_default();
    let store = state.engine.store.clone();
    let session = tokio::task::spawn_blocking(move || store.create_session(&title))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.engine.store.session(&id)?))
}

fn parse_f64(name: &str, v: &str) -> ApiResult<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ApiError::invalid(format!("{name} must be a number, got {v:?}")))
}

fn parse_usize(name: &str, v: &str) -> ApiResult<usize> {
    v.parse()
        .map_err(|_| ApiError::invalid(format!("{name} must be a non-negative integer, got {v:?}")))
}

/// Reads graph parameters from a query string over `defaults`.
pub fn graph_params(query: &HashMap<String, String>, defaults: &BuildParams) -> ApiResult<BuildParams> {
    let mut p = defaults.clone();
    for (key, value) in query {
        match key.as_str() {
            "alpha" => p.alpha = parse_f64(key, value)?,
            "s_min" => p.graph.s_min = parse_f64(key, value)?,
            "w_min" if value.is_empty() || value == "auto" => p.graph.w_min = None,
            "w_min" => p.graph.w_min = Some(parse_f64(key, value)?),
            "cluster_distance" => p.cluster_distance = parse_f64(key, value)?,
            "grouping_mode" => {
                p.grouping_mode = value
                    .parse::<GroupingMode>()
                    .map_err(|_| ApiError::invalid(format!("grouping_mode must be cluster or stage, got {value:?}")))?
            }
            "n_e" => p.graph.n_e = parse_usize(key, value)?,
            "seed" => {
                p.seed = value
                    .parse()
                    .map_err(|_| ApiError::invalid(format!("seed must be an unsigned integer, got {value:?}")))?
            }
            "thumb_size" => p.thumb_size = parse_f64(key, value)?,
            other => return Err(ApiError::invalid(format!("unknown parameter {other:?}"))),
        }
    }
    p.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok(p)
}

async fn get_graph(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    state.engine.store.session(&id)?;
    let params = graph_params(&query, &state.defaults)?;
    let bytes = state.engine.document(&id, &params).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], Body::from(bytes.as_ref().clone())).into_response())
}

fn s_min_param(query: &HashMap<String, String>, default: f64) -> ApiResult<f64> {
    let s = match query.get("s_min") {
        Some(v) => parse_f64("s_min", v)?,
        None => default,
    };
    if !(0.0..=1.0).contains(&s) {
        return Err(ApiError::invalid(format!("s_min = {s} is outside [0, 1]")));
    }
    Ok(s)
}

async fn get_history(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let s_min = s_min_param(&query, state.defaults.graph.s_min)?;
    Ok(Json(state.engine.history(&id, s_min)?))
}

async fn get_stages(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let s_min = s_min_param(&query, state.defaults.graph.s_min)?;
    Ok(Json(state.engine.stages(&id, s_min)?))
}

#[derive(Deserialize)]
struct StagePatch {
    #[serde(flatten)]
    command: StageOverride,
    s_min: Option<f64>,
}

async fn patch_stages(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(patch): Json<StagePatch>,
) -> ApiResult<impl IntoResponse> {
    let s_min = patch.s_min.unwrap_or(state.defaults.graph.s_min);
    if !(0.0..=1.0).contains(&s_min) {
        return Err(ApiError::invalid(format!("s_min = {s_min} is outside [0, 1]")));
    }
    let store = state.engine.store.clone();
    let command = patch.command;
    let result = tokio::task::spawn_blocking(move || {
        store.append_override(&id, command, |snapshot| {
            session_stages(&snapshot.to_session_input(), s_min).apply(command)
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let snapshot = result.map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok(Json(session_stages(&snapshot.to_session_input(), s_min)))
}

#[derive(Deserialize)]
struct GenerateBody {
    prompt: String,
    n: Option<usize>,
    seed: Option<u64>,
    width: Option<u32>,
    height: Option<u32>,
}

async fn post_generate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<GenerateBody>,
) -> ApiResult<impl IntoResponse> {
    state.engine.store.session(&id)?;
    let request = GenerationRequest {
        prompt: body.prompt,
        n: body.n.unwrap_or(DEFAULT_BATCH),
        seed: body.seed.unwrap_or(state.defaults.seed),
        width: body.width.unwrap_or(DEFAULT_IMAGE_SIZE),
        height: body.height.unwrap_or(DEFAULT_IMAGE_SIZE),
    };
    state
        .gateway
        .validate(&request)
        .map_err(|e| ApiError::invalid(e.to_string()))?;

    let job = Job {
        id: uuid::Uuid::new_v4().to_string(),
        session_id: id.clone(),
        status: JobStatus::Pending,
        request: request.clone(),
        step: None,
        error: None,
        retry_after_secs: None,
        created_at: Utc::now(),
    };
    state.jobs.lock().unwrap().insert(job.id.clone(), job.clone());

    state.enqueue(&id, job.id.clone(), request);
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    state
        .jobs
        .lock()
        .unwrap()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}

async fn list_jobs(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    state.engine.store.session(&id)?;
    let mut jobs: Vec<Job> = state
        .jobs
        .lock()
        .unwrap()
        .values()
        .filter(|j| j.session_id == id)
        .cloned()
        .collect();
    jobs.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
    Ok(Json(jobs))
}

async fn get_asset(
    State(state): State<Arc<AppState>>,
    Path((id, file)): Path<(String, String)>,
) -> ApiResult<Response> {
    let asset_id = file.strip_suffix(".png").unwrap_or(&file).to_owned();
    let store = state.engine.store.clone();
    let bytes = tokio::task::spawn_blocking(move || store.read_asset(&id, &asset_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}
