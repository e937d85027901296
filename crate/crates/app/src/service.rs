//! HTTP+JSON service for interactive, frame-accurate pattern filtering.
//!
//! A session holds one rendered scene, a processor choice and a pattern
//! timeline. Renders are offline blocks: the pattern active at STFT frame
//! `t` conditions exactly frame `t`. Each session serializes its own
//! renders; model parameters are loaded once and shared read-only.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use dirpat_core::eval::Method;
use dirpat_core::metrics::{sdr, wideband_ratio};
use dirpat_core::nn::{ArchConfig, ModelParams};
use dirpat_core::pattern::{gen_recipe, gen_recipe_a, sample_pattern, AnalyticPattern, PatternVector, Recipe, RecipeConfig};
use dirpat_core::scene::{render_mics, render_target, source_spectrograms, ArrayGeometry, RenderedScene, SceneFile, SourceMaterial};
use dirpat_core::stft::{Spectrogram, Stft, StftConfig};
use dirpat_core::timeline::{process_timeline, Processor, Timeline, TimelineEntry, TimelineRender};
use dirpat_core::wav::{read_wav_from, wav_bytes, Audio, SampleEncoding};
use dirpat_core::Error as CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use uuid::Uuid;

/// Longest scene a session will simulate or accept.
pub const MAX_SCENE_SECONDS: f64 = 120.0;

const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

/// Floor for spectrogram magnitudes before taking dB, so JSON stays finite.
const MIN_MAGNITUDE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub params: Arc<ModelParams>,
    pub cfg: ArchConfig,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub stft: StftConfig,
    pub array: ArrayGeometry,
    pub l: usize,
    pub model: Option<LoadedModel>,
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        self.stft.validate()?;
        self.array.validate()?;
        if let Some(m) = &self.model {
            let (q, f) = (self.array.num_mics(), self.stft.bins());
            if m.cfg.q != q || m.cfg.f != f || m.cfg.l != self.l {
                return Err(CoreError::Validation(format!(
                    "model expects Q={}, F={}, L={} but the service runs Q={q}, F={f}, L={}",
                    m.cfg.q, m.cfg.f, m.cfg.l, self.l
                )));
            }
        }
        Ok(())
    }
}

struct Session {
    scene: Arc<RenderedScene>,
    method: Method,
    timeline: Timeline,
    frames: usize,
}

struct Shared {
    stft: Stft,
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Self, CoreError> {
        cfg.validate()?;
        let stft = Stft::new(cfg.stft)?;
        Ok(AppState {
            shared: Arc::new(Shared {
                stft,
                cfg,
                sessions: RwLock::new(HashMap::new()),
            }),
        })
    }

    fn processor(&self, method: Method) -> Result<Processor, ApiError> {
        match method {
            Method::ParametricOracle => Ok(Processor::ParametricOracle),
            Method::Neural => {
                let m = self
                    .shared
                    .cfg
                    .model
                    .as_ref()
                    .ok_or_else(|| ApiError::unprocessable("the service was started without a model checkpoint"))?;
                Ok(Processor::Neural {
                    params: Arc::clone(&m.params),
                    cfg: m.cfg.clone(),
                })
            }
        }
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`"));
        let uuid = Uuid::parse_str(id).map_err(|_| not_found())?;
        self.shared.sessions.read().await.get(&uuid).cloned().ok_or_else(not_found)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/timeline", post(set_timeline))
        .route("/sessions/{id}/render", post(render))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/patterns/recipes", get(recipes))
        .route("/patterns/resolve", post(resolve))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, cfg: ServiceConfig) -> anyhow::Result<()> {
    let app = router(AppState::new(cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

// ---- errors

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

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::Validation(_)
            | CoreError::Shape { .. }
            | CoreError::DegeneratePattern
            | CoreError::Json(_)
            | CoreError::Wav(_)
            | CoreError::Ingestion { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, CoreError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

// ---- sessions

fn default_method() -> Method {
    Method::ParametricOracle
}

/// Exactly one of `scene` (simulated) or `wavs` (base64 RIFF files holding
/// one channel per microphone, as one multichannel file or several mono
/// files) must be given.
#[derive(Debug, Deserialize)]
pub struct CreateSession {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub scene: Option<SceneFile>,
    #[serde(default)]
    pub wavs: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub method: Method,
    pub sample_rate: u32,
    pub samples: usize,
    pub frames: usize,
    pub bins: usize,
    pub hop: usize,
    pub l: usize,
    pub num_mics: usize,
    pub source_doas_deg: Vec<f64>,
    /// Whether per-source components exist (simulated scenes only).
    pub has_components: bool,
    pub timeline: Vec<TimelineEntry>,
}

fn info(id: Uuid, s: &Session, shared: &Shared) -> SessionInfo {
    SessionInfo {
        id: id.to_string(),
        method: s.method,
        sample_rate: s.scene.sample_rate,
        samples: s.scene.len(),
        frames: s.frames,
        bins: shared.cfg.stft.bins(),
        hop: shared.cfg.stft.hop,
        l: shared.cfg.l,
        num_mics: s.scene.mic_signals.len(),
        source_doas_deg: s.scene.doas.iter().map(|d| d.to_degrees()).collect(),
        has_components: !s.scene.ref_components.is_empty(),
        timeline: s.timeline.entries(),
    }
}

fn decode_uploads(wavs: &[String], cfg: &ServiceConfig) -> Result<RenderedScene, CoreError> {
    let invalid = |m: String| CoreError::Validation(m);
    let mut channels = Vec::new();
    for (i, w) in wavs.iter().enumerate() {
        let bytes = B64
            .decode(w.trim())
            .map_err(|e| invalid(format!("upload {i} is not valid base64: {e}")))?;
        let audio = read_wav_from(Cursor::new(bytes))?;
        if audio.sample_rate != cfg.stft.sample_rate {
            return Err(invalid(format!(
                "upload {i} is sampled at {} Hz, expected {} Hz",
                audio.sample_rate, cfg.stft.sample_rate
            )));
        }
        channels.extend(audio.channels);
    }
    let q = cfg.array.num_mics();
    if channels.len() != q {
        return Err(invalid(format!("uploads carry {} channels, the array has {q} microphones", channels.len())));
    }
    let len = channels[0].len();
    if len == 0 || channels.iter().any(|c| c.len() != len) {
        return Err(invalid("uploaded channels must be non-empty and equally long".into()));
    }
    if len as f64 > MAX_SCENE_SECONDS * cfg.stft.sample_rate as f64 {
        return Err(invalid(format!("uploads longer than {MAX_SCENE_SECONDS} s are not accepted")));
    }
    Ok(RenderedScene {
        sample_rate: cfg.stft.sample_rate,
        mic_signals: channels,
        ref_components: Vec::new(),
        doas: Vec::new(),
        reference_index: cfg.array.reference_index,
        noise: None,
    })
}

fn simulate(file: &SceneFile, cfg: &ServiceConfig) -> Result<RenderedScene, CoreError> {
    if file
        .sources
        .iter()
        .any(|s| matches!(s.material, Some(SourceMaterial::Wav { .. })))
    {
        return Err(CoreError::Validation(
            "scene sources must be synthetic; upload recordings through `wavs` instead".into(),
        ));
    }
    if !(file.duration_s <= MAX_SCENE_SECONDS) {
        return Err(CoreError::Validation(format!("scenes longer than {MAX_SCENE_SECONDS} s are not accepted")));
    }
    let spec = file.load(cfg.stft.sample_rate, Path::new("."))?;
    render_mics(&spec, &cfg.array)
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let Json(req) = payload?;
    state.processor(req.method)?;
    let cfg = state.shared.cfg.clone();
    let scene = match (req.scene, req.wavs) {
        (Some(file), None) => blocking(move || simulate(&file, &cfg)).await?,
        (None, Some(wavs)) => blocking(move || decode_uploads(&wavs, &cfg)).await?,
        _ => return Err(ApiError::unprocessable("give exactly one of `scene` or `wavs`")),
    };
    if req.method == Method::ParametricOracle && scene.ref_components.is_empty() {
        return Err(ApiError::unprocessable(
            "the parametric oracle needs a simulated scene; uploaded recordings have no per-source components",
        ));
    }
    let frames = state.shared.cfg.stft.frames_for(scene.len());
    let omni = PatternVector::constant(state.shared.cfg.l, 1.0)?;
    let session = Session {
        scene: Arc::new(scene),
        method: req.method,
        timeline: Timeline::constant(omni),
        frames,
    };
    let id = Uuid::new_v4();
    let body = info(id, &session, &state.shared);
    state
        .shared
        .sessions
        .write()
        .await
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    Ok(Json(info(Uuid::parse_str(&id).expect("validated"), &s, &state.shared)))
}

async fn delete_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    state.session(&id).await?;
    let uuid = Uuid::parse_str(&id).expect("validated");
    state.shared.sessions.write().await.remove(&uuid);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimelineRequest {
    pub segments: Vec<TimelineEntry>,
}

async fn set_timeline(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<TimelineRequest>, JsonRejection>,
) -> ApiResult<Json<SessionInfo>> {
    let session = state.session(&id).await?;
    let Json(req) = payload?;
    let timeline = Timeline::new(req.segments, state.shared.cfg.l)?;
    let mut s = session.lock().await;
    if let Some((start, _)) = timeline.segments().iter().find(|(start, _)| *start >= s.frames) {
        return Err(ApiError::unprocessable(format!(
            "segment starting at frame {start} lies past the last frame ({})",
            s.frames - 1
        )));
    }
    s.timeline = timeline;
    Ok(Json(info(Uuid::parse_str(&id).expect("validated"), &s, &state.shared)))
}

// ---- rendering

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrogramFrames {
    /// `[T][F]` magnitudes in dB.
    pub unprocessed_db: Vec<Vec<f64>>,
    pub processed_db: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderResponse {
    pub sample_rate: u32,
    pub frames: usize,
    pub hop: usize,
    /// Float32 RIFF WAV of the processed reference channel.
    pub wav_base64: String,
    /// Segment index active at each frame.
    pub active_segment: Vec<usize>,
    /// `[T][L]` gains conditioning each frame.
    pub applied_gains: Vec<Vec<f64>>,
    pub spectrogram: SpectrogramFrames,
}

fn db_frames(spec: &Spectrogram) -> Vec<Vec<f64>> {
    spec.data
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| 20.0 * v.norm().max(MIN_MAGNITUDE).log10()).collect())
        .collect()
}

struct RenderJob {
    scene: Arc<RenderedScene>,
    timeline: Timeline,
    processor: Processor,
    stft: Stft,
}

impl RenderJob {
    async fn prepare(state: &AppState, s: &Session) -> ApiResult<Self> {
        Ok(RenderJob {
            scene: Arc::clone(&s.scene),
            timeline: s.timeline.clone(),
            processor: state.processor(s.method)?,
            stft: state.shared.stft.clone(),
        })
    }

    fn run(&self) -> Result<TimelineRender, CoreError> {
        process_timeline(&self.scene, &self.timeline, &self.processor, &self.stft)
    }
}

async fn render(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RenderResponse>> {
    let session = state.session(&id).await?;
    // held across the render so a session's renders never interleave
    let s = session.lock().await;
    let job = RenderJob::prepare(&state, &s).await?;
    let frames = s.frames;
    let body = blocking(move || {
        let out = job.run()?;
        let wav = wav_bytes(&Audio::mono(job.scene.sample_rate, out.signal), SampleEncoding::Float32)?;
        Ok(RenderResponse {
            sample_rate: job.scene.sample_rate,
            frames,
            hop: job.stft.config().hop,
            wav_base64: B64.encode(wav),
            active_segment: (0..frames).map(|t| job.timeline.active_segment(t)).collect(),
            applied_gains: job
                .timeline
                .frame_gains(frames)
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            spectrogram: SpectrogramFrames {
                unprocessed_db: db_frames(&out.unprocessed),
                processed_db: db_frames(&out.processed),
            },
        })
    })
    .await?;
    Ok(Json(body))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub doa_deg: f64,
    /// Mask energy ratio for this source alone.
    pub ratio: f64,
    pub ratio_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub method: Method,
    /// SDR of the processed output against the pattern-weighted target.
    pub sdr_db: f64,
    pub sdr_unprocessed_db: f64,
    pub sources: Vec<SourceMetrics>,
}

async fn metrics(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<MetricsResponse>> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    if s.scene.ref_components.is_empty() {
        return Err(ApiError::unprocessable(
            "metrics need per-source components, which uploaded recordings lack",
        ));
    }
    let job = RenderJob::prepare(&state, &s).await?;
    let method = s.method;
    let frames = s.frames;
    let body = blocking(move || {
        let out = job.run()?;
        let target = render_target(&job.scene, &job.timeline.per_frame(frames), &job.stft)?;
        let unprocessed = job.stft.istft(&out.unprocessed)?;
        let sources = source_spectrograms(&job.scene, &job.stft)?
            .iter()
            .zip(&job.scene.doas)
            .map(|(x, doa)| {
                let ratio = wideband_ratio(&out.mask, x)?;
                Ok(SourceMetrics {
                    doa_deg: doa.to_degrees(),
                    ratio,
                    ratio_db: 10.0 * ratio.max(1e-20).log10(),
                })
            })
            .collect::<Result<Vec<_>, CoreError>>()?;
        Ok(MetricsResponse {
            method,
            sdr_db: sdr(&target, &out.signal)?,
            sdr_unprocessed_db: sdr(&target, &unprocessed)?,
            sources,
        })
    })
    .await?;
    Ok(Json(body))
}

// ---- patterns

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipeInfo {
    pub name: String,
    pub description: String,
    /// Fixed patterns for recipe A; a few seeded draws otherwise.
    pub patterns: Vec<PatternVector>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipesResponse {
    pub l: usize,
    pub recipes: Vec<RecipeInfo>,
}

const EXAMPLE_DRAWS: usize = 8;

async fn recipes(State(state): State<AppState>) -> ApiResult<Json<RecipesResponse>> {
    let l = state.shared.cfg.l;
    let sample_all = |ps: Vec<AnalyticPattern>| -> Result<Vec<PatternVector>, CoreError> {
        ps.iter().map(|p| sample_pattern(p, l)).collect()
    };
    let mut recipes = vec![RecipeInfo {
        name: "a".into(),
        description: "60 fixed first-order patterns".into(),
        patterns: sample_all(gen_recipe_a())?,
    }];
    for (recipe, name, description) in [
        (Recipe::Bminus, "b-", "one random simplified DMA"),
        (Recipe::B, "b", "normalized sum of up to four random simplified DMAs"),
        (Recipe::Bplus, "b+", "sums of DMAs, rectangles, or both"),
    ] {
        let cfg = RecipeConfig {
            recipe,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = (0..EXAMPLE_DRAWS)
            .map(|_| gen_recipe(&cfg, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        recipes.push(RecipeInfo {
            name: name.into(),
            description: description.into(),
            patterns: sample_all(draws)?,
        });
    }
    Ok(Json(RecipesResponse { l, recipes }))
}

#[derive(Debug, Deserialize)]
pub struct ResolveRequest {
    pub pattern: AnalyticPattern,
    #[serde(default)]
    pub l: Option<usize>,
}

async fn resolve(
    State(state): State<AppState>,
    payload: Result<Json<ResolveRequest>, JsonRejection>,
) -> ApiResult<Json<PatternVector>> {
    let Json(req) = payload?;
    let l = req.l.unwrap_or(state.shared.cfg.l);
    Ok(Json(sample_pattern(&req.pattern, l)?))
}
