//! Local HTTP/JSON API over one project.
//!
//! | Method | Path                          | Result                                  |
//! |--------|-------------------------------|-----------------------------------------|
//! | GET    | `/api/project`                | current project                         |
//! | PUT    | `/api/edits`                  | replace edits; 422 with violations      |
//! | POST   | `/api/compile`                | start compile job; 409 while one runs   |
//! | GET    | `/api/jobs/{id}`              | job status                              |
//! | GET    | `/api/trajectory`             | per-edit VA samples of the last compile |
//! | GET    | `/api/preview/{frame}`        | PPM of the compiled track frame         |
//! | GET    | `/api/baseline-preview/{frame}` | PPM of the baseline frame             |
//! | GET    | `/api/metrics`                | last self-reenactment report; 404 if none |
//! | POST   | `/api/eval`                   | run self-reenactment on the configured subject |
//! | GET    | `/api/labels`                 | labels, intensities and region table    |
//!
//! Every failure is a JSON body `{code, message, detail}`. Compiled results
//! are published by swapping one `Arc`, so readers see either the previous
//! or the new result.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use dfm_core::decoder::load_weights;
use dfm_core::eval::{self_reenact_eval, EvalConfig, SelfReenactReport};
use dfm_core::face3d::{render_preview, BlendshapeModel};
use dfm_core::project::{compile_project, validate_project, CompileResult, Edit, Project};
use dfm_core::semantics::{EmotionLabel, Intensity};
use dfm_core::{CoeffTrack, ExpressionDataset, ExpressionDecoder};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;

pub const PPM_CONTENT_TYPE: &str = "image/x-portable-pixmap";
const PREVIEW_CACHE_LIMIT: usize = 4096;

pub type SharedDecoder = Arc<dyn ExpressionDecoder + Send + Sync>;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("project has no {0} path and none was given")]
    MissingPath(&'static str),
    #[error(transparent)]
    Core(#[from] dfm_core::Error),
}

impl From<dfm_core::project::ProjectError> for SetupError {
    fn from(e: dfm_core::project::ProjectError) -> Self {
        Self::Core(e.into())
    }
}

/// Everything the service needs at startup.
pub struct ServiceConfig {
    pub project: Project,
    /// Where accepted edits are written back; `None` keeps them in memory.
    pub project_path: Option<PathBuf>,
    pub baseline: CoeffTrack,
    pub model: BlendshapeModel,
    pub decoder: SharedDecoder,
    pub subject: Option<ExpressionDataset>,
    pub preview_width: usize,
    pub preview_height: usize,
    pub eval: EvalConfig,
}

/// Optional overrides of the paths stored in a project file.
#[derive(Debug, Clone, Default)]
pub struct PathOverrides {
    pub weights: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub subject: Option<PathBuf>,
}

impl ServiceConfig {
    /// Loads a project file and the model, weights and baseline it names.
    pub fn from_project_file(path: &Path, overrides: PathOverrides) -> Result<Self, SetupError> {
        let project = Project::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let pick = |o: Option<PathBuf>, p: &Option<PathBuf>, what| {
            o.or_else(|| p.as_ref().map(|p| Project::resolve(dir, p)))
                .ok_or(SetupError::MissingPath(what))
        };
        let weights = pick(overrides.weights, &project.weights, "weights")?;
        let model = pick(overrides.model, &project.model, "model")?;
        let decoder = load_weights(&weights).map_err(dfm_core::Error::from)?;
        let model = BlendshapeModel::load(&model).map_err(dfm_core::Error::from)?;
        let baseline = project.load_baseline(dir)?;
        let subject = overrides
            .subject
            .map(|p| dfm_core::dataset::load_dataset(p).map_err(dfm_core::Error::from))
            .transpose()?;
        Ok(Self {
            project,
            project_path: Some(path.to_path_buf()),
            baseline,
            model,
            decoder: Arc::new(decoder),
            subject,
            preview_width: 256,
            preview_height: 256,
            eval: EvalConfig::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: u64,
    pub state: JobState,
    pub progress: f64,
    pub message: String,
}

impl JobStatus {
    fn active(&self) -> bool {
        matches!(self.state, JobState::Queued | JobState::Running)
    }
}

struct Compiled {
    result: CompileResult,
    hash: u64,
}

struct Inner {
    project: RwLock<Project>,
    project_path: Option<PathBuf>,
    baseline: Arc<CoeffTrack>,
    baseline_hash: u64,
    model: BlendshapeModel,
    decoder: SharedDecoder,
    subject: Option<ExpressionDataset>,
    preview: (usize, usize),
    eval: EvalConfig,
    compiled: RwLock<Option<Arc<Compiled>>>,
    jobs: Mutex<Vec<JobStatus>>,
    metrics: RwLock<Option<SelfReenactReport>>,
    cache: Mutex<PreviewCache>,
}

/// Rendered PPM bytes keyed by (track hash, frame).
type PreviewCache = HashMap<(u64, usize), Arc<Vec<u8>>>;

/// Cheap-to-clone handle on the service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn track_hash(t: &CoeffTrack) -> u64 {
    let mut h = DefaultHasher::new();
    t.frames.len().hash(&mut h);
    for f in &t.frames {
        for x in f.0 {
            x.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            baseline_hash: track_hash(&cfg.baseline),
            project: RwLock::new(cfg.project),
            project_path: cfg.project_path,
            baseline: Arc::new(cfg.baseline),
            model: cfg.model,
            decoder: cfg.decoder,
            subject: cfg.subject,
            preview: (cfg.preview_width, cfg.preview_height),
            eval: cfg.eval,
            compiled: RwLock::new(None),
            jobs: Mutex::new(Vec::new()),
            metrics: RwLock::new(None),
            cache: Mutex::new(HashMap::new()),
        }))
    }

    pub fn job(&self, id: u64) -> Option<JobStatus> {
        self.0.jobs.lock().unwrap().iter().find(|j| j.job_id == id).cloned()
    }

    fn set_job(&self, id: u64, state: JobState, progress: f64, message: String) {
        let mut jobs = self.0.jobs.lock().unwrap();
        if let Some(j) = jobs.iter_mut().find(|j| j.job_id == id) {
            j.state = state;
            j.progress = progress;
            j.message = message;
        }
    }

    /// Renders frame `frame` of `track`, memoized by `(hash, frame)`.
    fn preview(&self, track: &CoeffTrack, hash: u64, frame: usize) -> Result<Arc<Vec<u8>>, ApiError> {
        if let Some(b) = self.0.cache.lock().unwrap().get(&(hash, frame)) {
            return Ok(b.clone());
        }
        let (w, h) = self.0.preview;
        let mesh = self.0.model.eval_mesh(&track.frames[frame]);
        let out = render_preview(&self.0.model, &mesh, w, h).map_err(|e| ApiError::internal("render_failed", e))?;
        let bytes = Arc::new(out.frame.to_ppm());
        let mut cache = self.0.cache.lock().unwrap();
        if cache.len() >= PREVIEW_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert((hash, frame), bytes.clone());
        Ok(bytes)
    }
}

/// JSON error body `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn internal(code: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/project", get(get_project))
        .route("/api/edits", put(put_edits))
        .route("/api/compile", post(post_compile))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/trajectory", get(get_trajectory))
        .route("/api/preview/{frame}", get(get_preview))
        .route("/api/baseline-preview/{frame}", get(get_baseline_preview))
        .route("/api/metrics", get(get_metrics))
        .route("/api/eval", post(post_eval))
        .route("/api/labels", get(get_labels))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn get_project(State(s): State<AppState>) -> Json<Project> {
    Json(s.0.project.read().unwrap().clone())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EditsBody {
    List(Vec<Edit>),
    Wrapped { edits: Vec<Edit> },
}

async fn put_edits(State(s): State<AppState>, body: axum::body::Bytes) -> ApiResult<Json<Project>> {
    let edits = match serde_json::from_slice::<EditsBody>(&body) {
        Ok(EditsBody::List(e)) | Ok(EditsBody::Wrapped { edits: e }) => e,
        Err(e) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("invalid edit list: {e}"))),
    };
    let mut candidate = s.0.project.read().unwrap().clone();
    candidate.edits = edits;
    let violations = validate_project(&candidate);
    if !violations.is_empty() {
        let message = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_edits", message);
        err.detail = serde_json::to_value(&violations).unwrap_or(Value::Null);
        return Err(err);
    }
    if let Some(p) = &s.0.project_path {
        candidate.save(p).map_err(|e| ApiError::internal("save_failed", e))?;
    }
    *s.0.project.write().unwrap() = candidate.clone();
    Ok(Json(candidate))
}

async fn post_compile(State(s): State<AppState>) -> ApiResult<(StatusCode, Json<JobStatus>)> {
    let status = {
        let mut jobs = s.0.jobs.lock().unwrap();
        if let Some(active) = jobs.iter().find(|j| j.active()) {
            let mut err = ApiError::new(StatusCode::CONFLICT, "job_running", format!("job {} is still running", active.job_id));
            err.detail = json!({ "job_id": active.job_id });
            return Err(err);
        }
        let status = JobStatus {
            job_id: jobs.len() as u64 + 1,
            state: JobState::Queued,
            progress: 0.0,
            message: String::new(),
        };
        jobs.push(status.clone());
        status
    };
    let project = s.0.project.read().unwrap().clone();
    let id = status.job_id;
    let worker = s.clone();
    tokio::task::spawn_blocking(move || {
        worker.set_job(id, JobState::Running, 0.0, String::new());
        match compile_project(&project, &worker.0.baseline, worker.0.decoder.as_ref()) {
            Ok(result) => {
                let hash = track_hash(&result.track);
                *worker.0.compiled.write().unwrap() = Some(Arc::new(Compiled { result, hash }));
                worker.set_job(id, JobState::Done, 1.0, "compiled".into());
            }
            Err(e) => worker.set_job(id, JobState::Failed, 1.0, e.to_string()),
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn get_job(State(s): State<AppState>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<JobStatus>> {
    s.job(id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no job {id}")))
}

async fn get_trajectory(State(s): State<AppState>) -> Json<Value> {
    let compiled = s.0.compiled.read().unwrap().clone();
    let segments: Vec<Value> = compiled
        .iter()
        .flat_map(|c| &c.result.segments)
        .map(|seg| {
            json!({
                "edit": seg.edit,
                "start_frame": seg.start_frame,
                "end_frame": seg.end_frame,
                "points": seg.trajectory.points,
            })
        })
        .collect();
    Json(json!({ "compiled": compiled.is_some(), "segments": segments }))
}

fn ppm_response(bytes: Arc<Vec<u8>>) -> Response {
    ([(header::CONTENT_TYPE, PPM_CONTENT_TYPE)], bytes.as_ref().clone()).into_response()
}

fn check_frame(frame: usize, n: usize) -> ApiResult<()> {
    if frame >= n {
        let mut e = ApiError::new(StatusCode::NOT_FOUND, "frame_out_of_range", format!("frame {frame} not in [0, {n})"));
        e.detail = json!({ "frame": frame, "n_frames": n });
        return Err(e);
    }
    Ok(())
}

async fn get_preview(State(s): State<AppState>, UrlPath(frame): UrlPath<usize>) -> ApiResult<Response> {
    let compiled = s.0.compiled.read().unwrap().clone();
    let Some(c) = compiled else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_compiled", "no compiled track yet"));
    };
    check_frame(frame, c.result.track.len())?;
    let bytes = tokio::task::spawn_blocking(move || s.preview(&c.result.track, c.hash, frame))
        .await
        .map_err(|e| ApiError::internal("render_failed", e))??;
    Ok(ppm_response(bytes))
}

async fn get_baseline_preview(State(s): State<AppState>, UrlPath(frame): UrlPath<usize>) -> ApiResult<Response> {
    check_frame(frame, s.0.baseline.len())?;
    let bytes = tokio::task::spawn_blocking(move || {
        let base = s.0.baseline.clone();
        s.preview(&base, s.0.baseline_hash, frame)
    })
    .await
    .map_err(|e| ApiError::internal("render_failed", e))??;
    Ok(ppm_response(bytes))
}

async fn get_metrics(State(s): State<AppState>) -> ApiResult<Json<SelfReenactReport>> {
    s.0.metrics
        .read()
        .unwrap()
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_metrics", "self-reenactment has not been run"))
}

async fn post_eval(State(s): State<AppState>) -> ApiResult<Json<SelfReenactReport>> {
    if s.0.subject.is_none() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no_subject", "service was started without a subject"));
    }
    let worker = s.clone();
    let report = tokio::task::spawn_blocking(move || {
        let i = &worker.0;
        self_reenact_eval(i.subject.as_ref().expect("checked"), &i.model, i.decoder.as_ref(), &i.eval)
    })
    .await
    .map_err(|e| ApiError::internal("eval_failed", e))?
    .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "eval_failed", e.to_string()))?;
    *s.0.metrics.write().unwrap() = Some(report.clone());
    Ok(Json(report))
}

async fn get_labels(State(s): State<AppState>) -> Json<Value> {
    let regions = s.0.project.read().unwrap().region_table();
    Json(json!({
        "labels": EmotionLabel::ALL,
        "intensities": Intensity::ALL,
        "labels_without_intensity": EmotionLabel::ALL.iter().filter(|l| !l.takes_intensity()).collect::<Vec<_>>(),
        "regions": regions,
    }))
}
