//! The `/api/v1` HTTP/JSON interface over a store of run directories.
//!
//! Every run lives in `<store>/<run id>/`. Stage work and the optimizer run
//! on a background worker thread per run; requests only read persisted
//! artifacts or go through the run's [`RecordHandle`], so concurrent
//! clients see consistent snapshots. Errors have the body
//! `{"error": {"code": ..., "message": ...}}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use procopt_core::moo::{IterationRecord, SteeringEvent};
use procopt_core::selection::SelectionCurve;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result, Stage};
use crate::recipe::Recipe;
use crate::run::{advance, load_model, open_run, ArchiveDoc, RecipesDoc, RunHooks};
use crate::slice::decision_slice;
use crate::store::{self, Overrides, RecordHandle, RunDir, RunRecord, RunStatus, SteeringLogEntry};

/// Longest time a long-poll request waits for new iterations.
pub const MAX_WAIT_MS: u64 = 30_000;

#[derive(Default)]
struct WorkerState {
    active: bool,
    rerun: bool,
}

struct RunEntry {
    handle: RecordHandle,
    steer: Mutex<Option<Sender<SteeringEvent>>>,
    /// Bumped whenever the run persists an iteration or changes status.
    progress: watch::Sender<u64>,
    worker: Mutex<WorkerState>,
}

impl RunEntry {
    fn new(handle: RecordHandle) -> Arc<Self> {
        Arc::new(Self {
            handle,
            steer: Mutex::new(None),
            progress: watch::channel(0).0,
            worker: Mutex::new(WorkerState::default()),
        })
    }

    fn bump(&self) {
        self.progress.send_modify(|n| *n = n.wrapping_add(1));
    }
}

/// Shared service state: the store root and the runs it holds.
pub struct AppState {
    store: PathBuf,
    runs: Mutex<BTreeMap<String, Arc<RunEntry>>>,
}

impl AppState {
    /// Opens a store, creating it if needed, and resumes every run that was
    /// neither finished nor waiting for overrides.
    pub fn open(store: &Path) -> Result<Arc<Self>> {
        std::fs::create_dir_all(store).map_err(|e| PipelineError::io(store, e))?;
        let state = Arc::new(Self { store: store.to_path_buf(), runs: Mutex::new(BTreeMap::new()) });
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(store)
            .map_err(|e| PipelineError::io(store, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(store::STATE).is_file())
            .collect();
        dirs.sort();
        for path in dirs {
            let handle = match RecordHandle::open(RunDir::new(&path)) {
                Ok(h) => h,
                Err(e) => {
                    tracing::warn!("skipping {}: {e}", path.display());
                    continue;
                }
            };
            let record = handle.snapshot();
            let entry = RunEntry::new(handle);
            state.runs.lock().insert(record.id.clone(), entry.clone());
            if !record.status.is_terminal() && !record.awaiting_overrides {
                spawn_worker(entry, record.status == RunStatus::Paused);
            }
        }
        Ok(state)
    }

    fn entry(&self, id: &str) -> std::result::Result<Arc<RunEntry>, ApiError> {
        self.runs.lock().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no run `{id}`")))
    }
}

struct WorkerHooks {
    entry: Arc<RunEntry>,
    start_paused: bool,
}

impl RunHooks for WorkerHooks {
    fn take_steering(&mut self) -> Option<mpsc::Receiver<SteeringEvent>> {
        let (tx, rx) = mpsc::channel();
        if std::mem::take(&mut self.start_paused) {
            let _ = tx.send(SteeringEvent::Pause);
        }
        *self.entry.steer.lock() = Some(tx);
        Some(rx)
    }

    fn on_iteration(&mut self, _record: &IterationRecord) {
        self.entry.bump();
    }

    fn on_status(&mut self, record: &RunRecord) {
        if record.is_complete(Stage::Optimize) {
            *self.entry.steer.lock() = None;
        }
        self.entry.bump();
    }
}

/// Runs the pending stages on a background thread. A request made while
/// the worker is busy makes it go round once more.
fn spawn_worker(entry: Arc<RunEntry>, start_paused: bool) {
    {
        let mut w = entry.worker.lock();
        if w.active {
            w.rerun = true;
            return;
        }
        w.active = true;
    }
    std::thread::spawn(move || {
        let mut hooks = WorkerHooks { entry: entry.clone(), start_paused };
        loop {
            if let Err(e) = advance(&entry.handle, Stage::Recipes, &mut hooks) {
                tracing::warn!("run {}: {e}", entry.handle.snapshot().id);
            }
            *entry.steer.lock() = None;
            entry.bump();
            let mut w = entry.worker.lock();
            if std::mem::take(&mut w.rerun) {
                continue;
            }
            w.active = false;
            break;
        }
    });
}

/// Builds the router for a store.
pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/curve", get(get_curve))
        .route("/runs/{id}/front", get(get_front))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/iterations", get(get_iterations))
        .route("/runs/{id}/steer", post(post_steer))
        .route("/runs/{id}/overrides", post(post_overrides))
        .route("/runs/{id}/slice", get(get_slice))
        .route("/runs/{id}/recipes", get(get_recipes))
        .route("/runs/{id}/recipes/{n}/export", get(export_recipe));
    Router::new().nest("/api/v1", api).with_state(state)
}

/// Serves the API on `bind` until the process ends.
pub fn serve(bind: &str, store: &Path) -> Result<()> {
    let state = AppState::open(store)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| PipelineError::io(Path::new("runtime"), e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| PipelineError::validation(format!("cannot bind {bind}: {e}")))?;
        tracing::info!("serving /api/v1 on {bind}, store {}", store.display());
        axum::serve(listener, router(state)).await.map_err(|e| PipelineError::io(Path::new(bind), e))
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Validation(m) => Self::bad_request(m),
            PipelineError::NotFound(m) => Self::not_found(m),
            PipelineError::Conflict(m) => Self::conflict(m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// A persisted JSON artifact passed through unchanged.
fn artifact(dir: &RunDir, name: &str) -> ApiResult<Response> {
    let text = dir.read_text(name)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    #[serde(default)]
    pub config: Option<PipelineConfig>,
    #[serde(default)]
    pub config_toml: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

/// The run fields a list view needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub completed: Vec<Stage>,
    pub awaiting_overrides: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<store::StageFailure>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            id: r.id.clone(),
            seed: r.seed,
            status: r.status,
            completed: r.completed.clone(),
            awaiting_overrides: r.awaiting_overrides,
            error: r.error.clone(),
        }
    }
}

/// `GET /runs/{id}`: the run document plus the number of persisted
/// iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    #[serde(flatten)]
    pub record: RunRecord,
    pub iterations: usize,
}

async fn create_run(State(state): State<Arc<AppState>>, Json(body): Json<CreateRun>) -> ApiResult<Response> {
    let mut config = match (body.config, body.config_toml) {
        (Some(c), None) => c,
        (None, Some(t)) => PipelineConfig::from_toml(&t)?,
        _ => return Err(ApiError::bad_request("give exactly one of `config` and `config_toml`")),
    };
    config.embed_sources(Path::new("."))?;
    config.validate()?;
    let id = config.run_id(body.seed);
    if let Some(entry) = state.runs.lock().get(&id).cloned() {
        return Ok((StatusCode::OK, Json(RunSummary::from(&entry.handle.snapshot()))).into_response());
    }
    let dir = RunDir::new(state.store.join(&id));
    let seed = body.seed;
    let handle = blocking(move || Ok(open_run(config, seed, dir)?)).await?;
    let entry = {
        let mut runs = state.runs.lock();
        if let Some(existing) = runs.get(&id) {
            return Ok((StatusCode::OK, Json(RunSummary::from(&existing.handle.snapshot()))).into_response());
        }
        let entry = RunEntry::new(handle);
        runs.insert(id, entry.clone());
        entry
    };
    let summary = RunSummary::from(&entry.handle.snapshot());
    spawn_worker(entry, false);
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Vec<RunSummary>> {
    let entries: Vec<Arc<RunEntry>> = state.runs.lock().values().cloned().collect();
    Json(entries.iter().map(|e| RunSummary::from(&e.handle.snapshot())).collect())
}

async fn get_run(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunView>> {
    let entry = state.entry(&id)?;
    blocking(move || {
        let record = entry.handle.snapshot();
        let iterations = entry.handle.dir().read_iterations()?.len();
        Ok(Json(RunView { record, iterations }))
    })
    .await
}

async fn get_curve(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    artifact(entry.handle.dir(), store::CURVE)
}

#[derive(Debug, Deserialize)]
pub struct FrontQuery {
    pub k: Option<usize>,
}

/// `GET /runs/{id}/front?k=`: the iteration record for `k` (latest when
/// absent), holding the evaluated candidates and the front after it.
async fn get_front(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FrontQuery>,
) -> ApiResult<Json<IterationRecord>> {
    let entry = state.entry(&id)?;
    blocking(move || {
        let records = entry.handle.dir().read_iterations()?;
        let found = match q.k {
            Some(k) => records.into_iter().find(|r| r.k == k),
            None => records.into_iter().last(),
        };
        found.map(Json).ok_or_else(|| ApiError::not_found(format!("iteration {:?} of run `{id}` does not exist", q.k)))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub rho: f64,
    pub sigma: f64,
    pub front_size: usize,
    pub metrics: procopt_core::moo::FrontMetrics,
}

async fn get_metrics(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Vec<MetricsRow>>> {
    let entry = state.entry(&id)?;
    blocking(move || {
        let records = entry.handle.dir().read_iterations()?;
        Ok(Json(
            records
                .into_iter()
                .map(|r| MetricsRow { k: r.k, rho: r.rho, sigma: r.sigma, front_size: r.front.len(), metrics: r.metrics })
                .collect(),
        ))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct IterationsQuery {
    /// Last iteration the client has seen.
    #[serde(default)]
    pub after: usize,
    /// Milliseconds to wait for a new iteration when none is available.
    #[serde(default)]
    pub wait: u64,
}

/// `GET /runs/{id}/iterations?after=&wait=` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationsPage {
    pub records: Vec<IterationRecord>,
    /// Cursor for the next request: the last `k` returned, or `after`.
    pub next: usize,
    pub status: RunStatus,
    /// No further iterations will be appended.
    pub done: bool,
}

async fn get_iterations(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<IterationsQuery>,
) -> ApiResult<Json<IterationsPage>> {
    let entry = state.entry(&id)?;
    let mut progress = entry.progress.subscribe();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait.min(MAX_WAIT_MS));
    loop {
        progress.borrow_and_update();
        let e = entry.clone();
        let after = q.after;
        let page = blocking(move || {
            let status = e.handle.snapshot().status;
            let records: Vec<IterationRecord> =
                e.handle.dir().read_iterations()?.into_iter().filter(|r| r.k > after).collect();
            let next = records.last().map_or(after, |r| r.k);
            let done = status.is_terminal() || e.handle.snapshot().is_complete(Stage::Optimize);
            Ok(IterationsPage { records, next, status, done })
        })
        .await?;
        if !page.records.is_empty() || page.done {
            return Ok(Json(page));
        }
        match tokio::time::timeout_at(deadline, progress.changed()).await {
            Ok(Ok(())) => continue,
            _ => return Ok(Json(page)),
        }
    }
}

/// `POST /runs/{id}/steer` body; exactly one field per request.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerRequest {
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    #[serde(default)]
    pub pause: bool,
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub stop: bool,
}

impl SteerRequest {
    pub fn event(&self) -> std::result::Result<SteeringEvent, String> {
        let mut events = Vec::new();
        if let Some(value) = self.rho {
            events.push(SteeringEvent::Rho { value });
        }
        if let Some(value) = self.sigma {
            events.push(SteeringEvent::Sigma { value });
        }
        if self.pause {
            events.push(SteeringEvent::Pause);
        }
        if self.resume {
            events.push(SteeringEvent::Resume);
        }
        if self.stop {
            events.push(SteeringEvent::Stop);
        }
        match events.len() {
            1 => {
                let e = events.remove(0);
                e.validate().map_err(|e| e.to_string())?;
                Ok(e)
            }
            0 => Err("give one of rho, sigma, pause, resume, stop".into()),
            _ => Err("give only one of rho, sigma, pause, resume, stop per request".into()),
        }
    }
}

async fn post_steer(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<SteerRequest>,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let event = body.event().map_err(ApiError::bad_request)?;
    let e = entry.clone();
    let logged = blocking(move || {
        let after_k = e.handle.dir().read_iterations()?.last().map_or(0, |r| r.k);
        let steer = e.steer.lock();
        let record = e.handle.try_update(|r| {
            if !r.status.accepts_steering() || steer.is_none() {
                return Err(PipelineError::Conflict(format!("run is {:?}; steering needs an optimizing run", r.status)));
            }
            let entry = SteeringLogEntry { after_k, event: event.clone() };
            r.steering.push(entry.clone());
            Ok(entry)
        })?;
        if let Some(tx) = steer.as_ref() {
            let _ = tx.send(event);
        }
        Ok(record)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(logged)).into_response())
}

async fn post_overrides(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<Overrides>,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let e = entry.clone();
    let summary = blocking(move || {
        let dir = e.handle.dir();
        if dir.exists(store::CURVE) {
            let curve: SelectionCurve = dir.read_json(store::CURVE)?;
            let unknown: Vec<&String> =
                body.add.iter().chain(&body.remove).filter(|n| !curve.ranked.contains(n)).collect();
            if !unknown.is_empty() {
                return Err(ApiError::bad_request(format!(
                    "unknown features: {}",
                    unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                )));
            }
        }
        let record = e.handle.try_update(|r| {
            if !r.accepts_overrides() {
                return Err(PipelineError::Conflict(format!(
                    "run is {:?}; overrides are accepted only before training",
                    r.status
                )));
            }
            r.overrides = body;
            r.overrides_submitted = true;
            r.awaiting_overrides = false;
            Ok(r.clone())
        })?;
        Ok(RunSummary::from(&record))
    })
    .await?;
    spawn_worker(entry, false);
    Ok((StatusCode::ACCEPTED, Json(summary)).into_response())
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    pub x: String,
    pub y: Option<String>,
    pub resolution: Option<usize>,
    /// Comma-separated native values of every feature.
    pub base: Option<String>,
}

pub const DEFAULT_RESOLUTION: usize = 21;

async fn get_slice(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Json<crate::slice::DecisionSlice>> {
    let entry = state.entry(&id)?;
    blocking(move || {
        let dir = entry.handle.dir();
        let model = load_model(dir)?;
        let base = q
            .base
            .as_deref()
            .map(|b| {
                b.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| ApiError::bad_request(format!("base value `{v}` is not a number"))))
                    .collect::<ApiResult<Vec<f64>>>()
            })
            .transpose()?;
        let archive: Vec<Vec<f64>> = if dir.exists(store::ARCHIVE) {
            let doc: ArchiveDoc = dir.read_json(store::ARCHIVE)?;
            doc.points.into_iter().map(|c| c.x).collect()
        } else {
            dir.read_iterations()?.pop().map(|r| r.front.into_iter().map(|c| c.x).collect()).unwrap_or_default()
        };
        let slice = decision_slice(
            &model,
            &archive,
            &q.x,
            q.y.as_deref(),
            q.resolution.unwrap_or(DEFAULT_RESOLUTION),
            base.as_deref(),
        )?;
        Ok(Json(slice))
    })
    .await
}

async fn get_recipes(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    artifact(entry.handle.dir(), store::RECIPES)
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    /// `json` (default) or `csv`.
    pub format: Option<String>,
}

/// `GET /runs/{id}/recipes/{n}/export`: the flat document of the recipe
/// ranked `n` (1-based).
async fn export_recipe(
    State(state): State<Arc<AppState>>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let doc: RecipesDoc = entry.handle.dir().read_json(store::RECIPES)?;
    let recipe: &Recipe = doc
        .recipes
        .iter()
        .find(|r| r.provenance.rank == n)
        .ok_or_else(|| ApiError::not_found(format!("run `{id}` has no recipe ranked {n}")))?;
    match q.format.as_deref().unwrap_or("json") {
        "json" => Ok(Json(recipe.export()).into_response()),
        "csv" => Ok(([(header::CONTENT_TYPE, "text/csv")], recipe.export_csv()).into_response()),
        other => Err(ApiError::bad_request(format!("unknown export format `{other}`; use json or csv"))),
    }
}
