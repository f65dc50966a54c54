//! HTTP front end: queued optimization jobs and synchronous renders.
//!
//! Jobs run FIFO on a fixed number of workers. Each job lives in a
//! directory named by a hash of its audio and request, so resubmitting the
//! same request returns the same job.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::mpsc;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::audio::{decode_wav_bytes, encode_wav_bytes, resample, save_audio, AudioBuffer, BitDepth};
use crate::embedding::Embedder;
use crate::error::Error;
use crate::fx::{chains_schema, mapped_from_json, FxChain, FxRenderer};
use crate::loss::text_direction;
use crate::optimizer::{build_prompts, optimize_with_progress, OptimizationConfig, Progress, PromptSpec, Variant};

pub const ARTIFACTS: [&str; 5] = ["effected.wav", "input.wav", "params.json", "losses.csv", "run_meta.json"];
const PROGRESS_INTERVAL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub workers: usize,
    pub max_upload_bytes: usize,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
    pub noise_seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("promptfx-jobs"),
            workers: 1,
            max_upload_bytes: 64 * 1024 * 1024,
            cors_origin: None,
            noise_seed: crate::fx::DEFAULT_NOISE_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRequest {
    pub prompt: String,
    pub contrast: Option<String>,
    pub chain: FxChain,
    pub config: OptimizationConfig,
    pub audio_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobSummary {
    pub chosen_run: usize,
    pub final_losses: Vec<f64>,
    pub initial_losses: Vec<f64>,
    pub loss_traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub status: JobStatus,
    pub progress: Option<Progress>,
    pub request: JobRequest,
    pub error: Option<JobError>,
    pub result: Option<JobSummary>,
    pub artifacts: Vec<String>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    embedder: Embedder,
    renderer: FxRenderer,
    jobs: Mutex<HashMap<String, Job>>,
    queue: mpsc::UnboundedSender<String>,
}

impl AppState {
    /// Spawns the worker tasks; call from inside a tokio runtime.
    pub fn start(config: ServiceConfig, embedder: Embedder) -> std::io::Result<Self> {
        std::fs::create_dir_all(config.data_dir.join("jobs"))?;
        let (tx, rx) = mpsc::unbounded_channel::<String>();
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let state = AppState {
            inner: Arc::new(Inner {
                renderer: FxRenderer::new(config.noise_seed),
                config,
                embedder,
                jobs: Mutex::new(HashMap::new()),
                queue: tx,
            }),
        };
        for _ in 0..state.inner.config.workers.max(1) {
            let state = state.clone();
            let rx = rx.clone();
            tokio::spawn(async move {
                loop {
                    let next = rx.lock().await.recv().await;
                    let Some(id) = next else { break };
                    let worker_state = state.clone();
                    let job_id = id.clone();
                    let outcome = tokio::task::spawn_blocking(move || worker_state.run_job(&job_id)).await;
                    if let Err(e) = outcome {
                        state.fail(&id, "internal", &format!("worker task failed: {e}"));
                    }
                }
            });
        }
        Ok(state)
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.inner.config.data_dir.join("jobs").join(id)
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let mut jobs = self.inner.jobs.lock().expect("job store poisoned");
        if let Some(job) = jobs.get_mut(id) {
            f(job);
        }
    }

    fn get(&self, id: &str) -> Option<Job> {
        if let Some(job) = self.inner.jobs.lock().expect("job store poisoned").get(id) {
            return Some(job.clone());
        }
        // Finished jobs survive restarts through their job.json.
        let text = std::fs::read_to_string(self.job_dir(id).join("job.json")).ok()?;
        let job: Job = serde_json::from_str(&text).ok()?;
        self.inner
            .jobs
            .lock()
            .expect("job store poisoned")
            .insert(id.to_string(), job.clone());
        Some(job)
    }

    fn persist(&self, id: &str) {
        if let Some(job) = self.get(id) {
            let path = self.job_dir(id).join("job.json");
            if let Err(e) = serde_json::to_vec_pretty(&job)
                .map_err(std::io::Error::from)
                .and_then(|bytes| std::fs::write(&path, bytes))
            {
                log::warn!("cannot write {}: {e}", path.display());
            }
        }
    }

    fn fail(&self, id: &str, code: &str, message: &str) {
        self.update(id, |job| {
            job.status = JobStatus::Failed;
            job.error = Some(JobError {
                code: code.to_string(),
                message: message.to_string(),
            });
        });
        self.persist(id);
    }

    fn run_job(&self, id: &str) {
        let Some(job) = self.get(id) else { return };
        if job.status != JobStatus::Queued {
            return;
        }
        self.update(id, |j| j.status = JobStatus::Running);
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| self.execute(&job)));
        match outcome {
            Ok(Ok(summary)) => {
                self.update(id, |j| {
                    j.status = JobStatus::Done;
                    j.result = Some(summary);
                    j.artifacts = ARTIFACTS.iter().map(|a| format!("/v1/jobs/{id}/artifacts/{a}")).collect();
                });
                self.persist(id);
            }
            Ok(Err(e)) => self.fail(id, e.code(), &e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                self.fail(id, "internal", &msg);
            }
        }
    }

    fn execute(&self, job: &Job) -> crate::Result<JobSummary> {
        let dir = self.job_dir(&job.id);
        let req = &job.request;
        let audio = crate::audio::load_audio(dir.join("input.wav"))?;
        let prompts = build_prompts(&req.prompt, req.contrast.as_deref())?;
        let last_write = Mutex::new(Instant::now() - PROGRESS_INTERVAL);
        let on_progress = |p: Progress| {
            let mut last = last_write.lock().expect("progress clock poisoned");
            if last.elapsed() >= PROGRESS_INTERVAL || p.iteration == req.config.iterations {
                *last = Instant::now();
                self.update(&job.id, |j| j.progress = Some(p));
            }
        };
        let result = optimize_with_progress(
            &audio,
            &prompts,
            &req.chain,
            &req.config,
            &self.inner.embedder,
            &self.inner.renderer,
            &on_progress,
        )?;
        save_audio(&result.effected_audio, dir.join("effected.wav"), BitDepth::Float32)?;
        let write = |name: &str, bytes: Vec<u8>| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        };
        write("params.json", serde_json::to_vec_pretty(&result.params_json()?)?)?;
        write("run_meta.json", serde_json::to_vec_pretty(&result.run_meta())?)?;
        let mut csv = Vec::new();
        result.write_loss_csv(&mut csv)?;
        write("losses.csv", csv)?;
        Ok(JobSummary {
            chosen_run: result.chosen_run,
            final_losses: result.final_losses(),
            initial_losses: result.initial_losses(),
            loss_traces: result.runs.iter().map(|r| r.trace.clone()).collect(),
        })
    }

    fn processing_rate(&self) -> u32 {
        self.inner.embedder.descriptor().input_sample_rate
    }
}

pub fn router(state: AppState) -> Router {
    let cors = match &state.inner.config.cors_origin {
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
    .allow_headers([header::CONTENT_TYPE]);
    let limit = state.inner.config.max_upload_bytes;
    Router::new()
        .route("/v1/jobs", post(create_job))
        .route("/v1/jobs/:id", get(get_job))
        .route("/v1/jobs/:id/artifacts/:name", get(get_artifact))
        .route("/v1/render", post(render))
        .route("/v1/chains", get(list_chains))
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": { "code": code, "message": message.into() } }),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DegeneratePromptPair | Error::Schema { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. } | Error::Backend(_) | Error::BackendUnavailable(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        let mut api = ApiError::new(status, e.code(), e.to_string());
        if let Error::Schema { field, .. } = &e {
            api.body["error"]["field"] = json!(field);
        }
        api
    }
}

impl From<axum::extract::multipart::MultipartError> for ApiError {
    fn from(e: axum::extract::multipart::MultipartError) -> Self {
        let status = e.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "payload_too_large"
        } else {
            "bad_multipart"
        };
        ApiError::new(status, code, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Multipart form collected into named text fields plus raw bytes for
/// `audio`.
struct Form {
    audio: Option<Vec<u8>>,
    fields: HashMap<String, String>,
}

async fn read_form(mut multipart: Multipart) -> ApiResult<Form> {
    let mut form = Form {
        audio: None,
        fields: HashMap::new(),
    };
    while let Some(field) = multipart.next_field().await? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await?;
        if name == "audio" {
            form.audio = Some(bytes.to_vec());
        } else {
            let text = String::from_utf8(bytes.to_vec())
                .map_err(|_| ApiError::bad_request(format!("field `{name}` is not UTF-8")))?;
            form.fields.insert(name, text);
        }
    }
    Ok(form)
}

impl Form {
    fn text(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> ApiResult<Option<T>> {
        match self.text(name).map(str::trim).filter(|s| !s.is_empty()) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| ApiError::bad_request(format!("field `{name}` has invalid value `{s}`"))),
        }
    }

    fn audio(&self, rate: u32) -> ApiResult<(Vec<u8>, AudioBuffer)> {
        let bytes = self
            .audio
            .clone()
            .ok_or_else(|| ApiError::bad_request("missing `audio` file field"))?;
        let buf = decode_wav_bytes(&bytes)?;
        Ok((bytes, resample(&buf, rate)?))
    }
}

async fn create_job(State(state): State<AppState>, multipart: Multipart) -> ApiResult<Response> {
    let form = read_form(multipart).await?;
    let prompt = form.text("prompt").unwrap_or_default().trim().to_string();
    let contrast = form.text("contrast").map(str::trim).filter(|c| !c.is_empty()).map(String::from);
    let prompts: PromptSpec = build_prompts(&prompt, contrast.as_deref())?;
    let chain_name = form.text("chain").unwrap_or("eq");
    let chain: FxChain = chain_name.parse()?;
    if chain.is_empty() {
        return Err(ApiError::from(Error::UnknownChain(chain_name.to_string())));
    }
    let defaults = OptimizationConfig::default();
    let config = OptimizationConfig {
        variant: form.parse::<Variant>("variant")?.unwrap_or(defaults.variant),
        iterations: form.parse("iterations")?.unwrap_or(defaults.iterations),
        runs: form.parse("runs")?.unwrap_or(defaults.runs),
        learning_rate: form.parse("learning_rate")?.unwrap_or(defaults.learning_rate),
        max_shift_ms: form.parse("max_shift_ms")?.unwrap_or(defaults.max_shift_ms),
        seed: form.parse("seed")?.unwrap_or_else(rand::random),
        ..defaults
    };
    config.validate()?;

    let embedder = &state.inner.embedder;
    if config.variant == Variant::Directional {
        let t2 = embedder.embed_text(&prompts.target())?;
        let t1 = embedder.embed_text(&prompts.contrast())?;
        text_direction(&t1, &t2)?;
    }
    let (bytes, audio) = form.audio(state.processing_rate())?;

    let request = JobRequest {
        prompt,
        contrast,
        chain,
        config,
        audio_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let id = {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&request).map_err(Error::from)?);
        hex::encode(&h.finalize()[..12])
    };
    if let Some(existing) = state.get(&id) {
        if existing.status != JobStatus::Failed {
            return Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response());
        }
    }
    let dir = state.job_dir(&id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_audio(&audio, dir.join("input.wav"), BitDepth::Float32)?;
    let job = Job {
        id: id.clone(),
        status: JobStatus::Queued,
        progress: None,
        request,
        error: None,
        result: None,
        artifacts: Vec::new(),
    };
    state
        .inner
        .jobs
        .lock()
        .expect("job store poisoned")
        .insert(id.clone(), job);
    state
        .inner
        .queue
        .send(id.clone())
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "job queue closed"))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
}

fn not_found(what: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
}

async fn get_job(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Job>> {
    state.get(&id).map(Json).ok_or_else(|| not_found("job"))
}

async fn get_artifact(
    State(state): State<AppState>,
    UrlPath((id, name)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    if !ARTIFACTS.contains(&name.as_str()) {
        return Err(not_found("artifact"));
    }
    let job = state.get(&id).ok_or_else(|| not_found("job"))?;
    if job.status != JobStatus::Done && name != "input.wav" {
        return Err(ApiError::new(StatusCode::CONFLICT, "not_ready", "job has not finished"));
    }
    let path = state.job_dir(&id).join(&name);
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found("artifact"))?;
    let content_type = match name.rsplit('.').next() {
        Some("wav") => "audio/wav",
        Some("json") => "application/json",
        _ => "text/csv",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

async fn render(State(state): State<AppState>, multipart: Multipart) -> ApiResult<Response> {
    let form = read_form(multipart).await?;
    let text = form
        .text("params")
        .ok_or_else(|| ApiError::bad_request("missing `params` field"))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        ApiError::from(Error::Schema {
            field: "$".into(),
            reason: format!("invalid JSON: {e}"),
        })
    })?;
    let (chain, mapped) = mapped_from_json(&doc)?;
    let (_, audio) = form.audio(state.processing_rate())?;
    let state2 = state.clone();
    let bytes = tokio::task::spawn_blocking(move || -> crate::Result<Vec<u8>> {
        let out = state2.inner.renderer.render_mapped(&audio, &mapped, &chain)?;
        Ok(encode_wav_bytes(&out, BitDepth::Float32)?.0)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn list_chains() -> Json<Value> {
    Json(chains_schema())
}
