//! Local HTTP API for the curve editor.
//!
//! The project directory holds `clip.wav`, drawn curves under `curves/`
//! (`<name>.nbcv` plus the sparse points as `<name>.json`) and checkpoints
//! under `models/`. Nothing else is kept between requests, so restarting
//! loses nothing. Renders run one at a time on a single lane.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nbn_core::creative::Randomization;
use nbn_core::features::{ControlCurve, CurveRate, NormRange};
use nbn_core::loss::stft_mag;
use nbn_core::noise_bank::NoiseBandBank;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::engine::{load_model, LoadedModel, RenderOptions};
use crate::error::{Error, Result};
use crate::formats::atomic_write;
use crate::formats::checkpoint::ControlKind;
use crate::formats::curve::{load_curve, save_curve};
use crate::formats::wav::{read_wav, wav_bytes};

pub const SEED_HEADER: &str = "x-render-seed";
pub const CLIP_FFT: usize = 512;
pub const CLIP_HOP: usize = 128;
/// Floor of the spectrogram in dB.
pub const SPECTROGRAM_FLOOR_DB: f64 = -120.0;
/// Longest render accepted, in frames.
pub const MAX_FRAMES: usize = 1 << 20;

pub struct AppState {
    project: PathBuf,
    models: BTreeMap<String, Arc<LoadedModel>>,
    lane: tokio::sync::Mutex<()>,
    queued: AtomicUsize,
    rendering: AtomicBool,
    seeds: Mutex<ChaCha8Rng>,
}

impl AppState {
    /// Loads every checkpoint in `<project>/models` plus `extra`.
    pub fn open(
        project: &Path,
        extra: &[PathBuf],
        bank: Option<Arc<NoiseBandBank>>,
        allow_bank_mismatch: bool,
        seed: u64,
    ) -> Result<Arc<Self>> {
        std::fs::create_dir_all(project.join("curves")).map_err(|e| Error::io(project, e))?;
        let mut paths: Vec<PathBuf> = match std::fs::read_dir(project.join("models")) {
            Ok(entries) => entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "nbck"))
                .collect(),
            Err(_) => Vec::new(),
        };
        paths.sort();
        paths.extend(extra.iter().cloned());
        let mut models = BTreeMap::new();
        for path in paths {
            let model = load_model(&path, bank.clone(), allow_bank_mismatch)?;
            if let Some(w) = &model.warning {
                eprintln!("warning: {}: {w}", model.id);
            }
            if models.insert(model.id.clone(), Arc::new(model)).is_some() {
                return Err(Error::Usage(format!("two checkpoints are named `{}`", path.display())));
            }
        }
        Ok(Arc::new(Self {
            project: project.to_path_buf(),
            models,
            lane: tokio::sync::Mutex::new(()),
            queued: AtomicUsize::new(0),
            rendering: AtomicBool::new(false),
            seeds: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }))
    }

    fn clip_path(&self) -> PathBuf {
        self.project.join("clip.wav")
    }

    fn curve_paths(&self, name: &str) -> (PathBuf, PathBuf) {
        let dir = self.project.join("curves");
        (dir.join(format!("{name}.nbcv")), dir.join(format!("{name}.json")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| {
            origin.to_str().map(is_local_origin).unwrap_or(false)
        }))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE, HeaderName::from_static(SEED_HEADER)])
        .expose_headers([HeaderName::from_static(SEED_HEADER)]);
    Router::new()
        .route("/api/clip", get(clip))
        .route("/api/curve", post(post_curve))
        .route("/api/curve/:name", get(get_curve))
        .route("/api/curves", get(list_curves))
        .route("/api/synth", post(synth))
        .route("/api/models", get(models))
        .route("/api/status", get(status))
        .layer(cors)
        .with_state(state)
}

pub fn is_local_origin(origin: &str) -> bool {
    let rest = origin.strip_prefix("http://").or_else(|| origin.strip_prefix("https://"));
    let Some(rest) = rest else { return false };
    let host = if rest.starts_with('[') {
        rest.split_inclusive(']').next().unwrap_or("")
    } else {
        rest.split(':').next().unwrap_or("")
    };
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

pub fn serve_blocking(state: Arc<AppState>, host: &str, port: u16) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new("<runtime>"), e))?;
    runtime.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::io(Path::new(&addr), e))?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, router(state)).await.map_err(|e| Error::io(Path::new(&addr), e))
    })
}

/// JSON error body with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound { .. } => StatusCode::NOT_FOUND,
            Error::Usage(_) | Error::Mismatch(_) | Error::Core(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, format!("{}: {e}", e.code()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct ClipQuery {
    columns: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Spectrogram {
    pub fft_size: usize,
    pub hop: usize,
    pub frames: usize,
    pub bins: usize,
    /// Row-major (frame, bin) magnitudes in dB.
    pub values: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ClipSummary {
    pub sample_rate: u32,
    pub length: usize,
    /// `[min, max]` per display column.
    pub waveform: Vec<[f32; 2]>,
    pub spectrogram: Spectrogram,
}

pub fn summarize_clip(samples: &[f64], sample_rate: u32, columns: usize) -> Result<ClipSummary> {
    let columns = columns.clamp(1, samples.len().max(1));
    let waveform = (0..columns)
        .map(|c| {
            let (a, b) = (c * samples.len() / columns, ((c + 1) * samples.len() / columns).max(c * samples.len() / columns + 1));
            let part = &samples[a..b.min(samples.len())];
            let lo = part.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = part.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            [lo as f32, hi as f32]
        })
        .collect();
    let s = stft_mag(samples, CLIP_FFT, CLIP_HOP, CLIP_FFT)?;
    let values =
        s.values.iter().map(|&m| (20.0 * m.log10()).max(SPECTROGRAM_FLOOR_DB) as f32).collect();
    Ok(ClipSummary {
        sample_rate,
        length: samples.len(),
        waveform,
        spectrogram: Spectrogram { fft_size: CLIP_FFT, hop: CLIP_HOP, frames: s.frames, bins: s.bins, values },
    })
}

async fn clip(State(st): State<Arc<AppState>>, Query(q): Query<ClipQuery>) -> ApiResult<Json<ClipSummary>> {
    let path = st.clip_path();
    let audio = tokio::task::spawn_blocking(move || read_wav(&path)).await.expect("reader does not panic");
    let audio = match audio {
        Err(Error::NotFound { .. }) => return Err(ApiError::not_found("the project has no clip.wav")),
        other => other?,
    };
    if audio.samples.is_empty() {
        return Err(ApiError::not_found("clip.wav is empty"));
    }
    Ok(Json(summarize_clip(&audio.samples, audio.sample_rate, q.columns.unwrap_or(1024))?))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Point {
    pub t: f64,
    pub v: f64,
}

/// Validates, sorts by `t` and removes duplicate times. Among points with
/// equal `t` the one given last wins.
pub fn normalize_points(points: &[Point]) -> std::result::Result<Vec<Point>, String> {
    if points.is_empty() {
        return Err("a curve needs at least one point".into());
    }
    for p in points {
        if !(0.0..=1.0).contains(&p.t) || !(0.0..=1.0).contains(&p.v) {
            return Err(format!("point (t = {}, v = {}) lies outside [0, 1]", p.t, p.v));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut out: Vec<Point> = Vec::with_capacity(sorted.len());
    for p in sorted {
        match out.last_mut() {
            Some(last) if last.t == p.t => *last = p,
            _ => out.push(p),
        }
    }
    Ok(out)
}

/// Piecewise-linear curve through sorted points on `len` evenly spaced
/// positions spanning `[0, 1]`; held constant outside the first and last
/// point.
pub fn densify(points: &[Point], len: usize) -> Vec<f64> {
    let mut seg = 0;
    (0..len)
        .map(|i| {
            let x = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
            while seg + 1 < points.len() && points[seg + 1].t < x {
                seg += 1;
            }
            let a = points[seg];
            if x <= a.t || seg + 1 == points.len() {
                return a.v;
            }
            let b = points[seg + 1];
            a.v + (b.v - a.v) * (x - a.t) / (b.t - a.t)
        })
        .collect()
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Deserialize)]
struct CurveRequest {
    name: String,
    points: Vec<Point>,
    /// Samples in the stored curve; defaults to the clip length.
    length: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StoredCurve {
    pub name: String,
    pub length: usize,
    pub points: Vec<Point>,
}

async fn post_curve(
    State(st): State<Arc<AppState>>,
    Json(req): Json<CurveRequest>,
) -> ApiResult<(StatusCode, Json<StoredCurve>)> {
    if !valid_name(&req.name) {
        return Err(ApiError::unprocessable("curve names use 1-64 letters, digits, '-' or '_'"));
    }
    let points = normalize_points(&req.points).map_err(ApiError::unprocessable)?;
    let length = match req.length {
        Some(0) => return Err(ApiError::unprocessable("length must be positive")),
        Some(n) => n,
        None => match read_wav(&st.clip_path()) {
            Ok(a) if !a.samples.is_empty() => a.samples.len(),
            Ok(_) | Err(Error::NotFound { .. }) => {
                return Err(ApiError::not_found("no clip to size the curve; pass a length"))
            }
            Err(e) => return Err(e.into()),
        },
    };
    let curve = ControlCurve::new(
        req.name.clone(),
        densify(&points, length),
        CurveRate::Audio,
        NormRange { min: 0.0, max: 1.0 },
    )
    .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let stored = StoredCurve { name: req.name.clone(), length, points };
    let (nbcv, sidecar) = st.curve_paths(&req.name);
    let body = serde_json::to_vec(&stored).expect("plain data");
    tokio::task::spawn_blocking(move || -> Result<()> {
        save_curve(&curve, &nbcv)?;
        atomic_write(&sidecar, |o| o.write_all(&body))
    })
    .await
    .expect("writer does not panic")?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn get_curve(State(st): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> ApiResult<Json<StoredCurve>> {
    if !valid_name(&name) {
        return Err(ApiError::not_found(format!("no curve `{name}`")));
    }
    let (_, sidecar) = st.curve_paths(&name);
    let bytes = std::fs::read(&sidecar).map_err(|_| ApiError::not_found(format!("no curve `{name}`")))?;
    let stored = serde_json::from_slice(&bytes)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", sidecar.display())))?;
    Ok(Json(stored))
}

async fn list_curves(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<String>>> {
    let mut names: Vec<String> = std::fs::read_dir(st.project.join("curves"))
        .map_err(|e| ApiError::from(Error::io(&st.project, e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "nbcv"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    Ok(Json(names))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CurveInput {
    Stored(String),
    Points { points: Vec<Point> },
}

#[derive(Debug, Clone, Deserialize)]
struct TopK {
    k: usize,
    lo: f64,
    hi: f64,
    frame_len: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
struct Shift {
    f_init: i64,
    f_shift: i64,
    frame_len: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
struct SynthRequest {
    model: String,
    curve: Option<CurveInput>,
    #[serde(default)]
    curves: Vec<CurveInput>,
    length_frames: usize,
    #[serde(default)]
    stereo: bool,
    topk: Option<TopK>,
    shift: Option<Shift>,
    seed: Option<u64>,
}

fn request_curves(st: &AppState, req: &SynthRequest) -> ApiResult<Vec<ControlCurve>> {
    let inputs: Vec<&CurveInput> = req.curve.iter().chain(&req.curves).collect();
    inputs
        .into_iter()
        .map(|input| match input {
            CurveInput::Points { points } => {
                let points = normalize_points(points).map_err(ApiError::unprocessable)?;
                ControlCurve::new(
                    "drawn",
                    densify(&points, req.length_frames),
                    CurveRate::Internal,
                    NormRange { min: 0.0, max: 1.0 },
                )
                .map_err(|e| ApiError::unprocessable(e.to_string()))
            }
            CurveInput::Stored(name) => {
                if !valid_name(name) {
                    return Err(ApiError::not_found(format!("no curve `{name}`")));
                }
                match load_curve(&st.curve_paths(name).0) {
                    Err(Error::NotFound { .. }) => Err(ApiError::not_found(format!("no curve `{name}`"))),
                    other => Ok(other?),
                }
            }
        })
        .collect()
}

fn seed_from(headers: &HeaderMap, body: Option<u64>, st: &AppState) -> ApiResult<u64> {
    if let Some(seed) = body {
        return Ok(seed);
    }
    if let Some(value) = headers.get(SEED_HEADER) {
        return value
            .to_str()
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| ApiError::unprocessable(format!("{SEED_HEADER} must be an unsigned integer")));
    }
    Ok(st.seeds.lock().expect("seed generator lock").next_u64())
}

/// Decrements the queue counter when a request leaves the lane.
struct QueueSlot<'a>(&'a AtomicUsize);

impl Drop for QueueSlot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn synth(State(st): State<Arc<AppState>>, headers: HeaderMap, Json(req): Json<SynthRequest>) -> ApiResult<Response> {
    let model = st
        .models
        .get(&req.model)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no model `{}`", req.model)))?;
    if req.length_frames == 0 || req.length_frames > MAX_FRAMES {
        return Err(ApiError::unprocessable(format!("length_frames must lie in 1..={MAX_FRAMES}")));
    }
    let curves = request_curves(&st, &req)?;
    let controls = model.controls_from_curves(&curves, Some(req.length_frames))?;
    let mut schemes = Vec::new();
    if let Some(t) = &req.topk {
        schemes.push(Randomization::TopK { frame_len: t.frame_len.unwrap_or(430), k: t.k, lo: t.lo, hi: t.hi });
    }
    if let Some(s) = &req.shift {
        schemes.push(Randomization::Shift { frame_len: s.frame_len.unwrap_or(645), f_init: s.f_init, f_shift: s.f_shift });
    }
    let seed = seed_from(&headers, req.seed, &st)?;
    let opts = RenderOptions { schemes, stereo: req.stereo, seed };

    st.queued.fetch_add(1, Ordering::SeqCst);
    let _slot = QueueSlot(&st.queued);
    let _lane = st.lane.lock().await;
    st.rendering.store(true, Ordering::SeqCst);
    let sample_rate = model.checkpoint.sample_rate.round() as u32;
    let rendered = tokio::task::spawn_blocking(move || -> Result<Vec<u8>> {
        let channels = model.synthesize(&controls, &opts)?;
        let refs: Vec<&[f64]> = channels.iter().map(|c| c.as_slice()).collect();
        wav_bytes(&refs, sample_rate)
    })
    .await;
    st.rendering.store(false, Ordering::SeqCst);
    let wav = rendered.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav")), (HeaderName::from_static(SEED_HEADER), HeaderValue::from(seed))],
        wav,
    )
        .into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ControlInfo {
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub id: String,
    pub backend: String,
    pub num_controls: usize,
    pub controls: Vec<ControlInfo>,
    pub w: usize,
    pub sample_rate: f64,
    pub outputs: usize,
}

async fn models(State(st): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(
        st.models
            .values()
            .map(|m| ModelInfo {
                id: m.id.clone(),
                backend: m.checkpoint.backend.label(),
                num_controls: m.num_controls(),
                controls: m
                    .checkpoint
                    .controls
                    .iter()
                    .map(|c| ControlInfo {
                        name: c.name.clone(),
                        kind: match c.kind {
                            ControlKind::Feature(k) => k.name().to_string(),
                            ControlKind::Curve => "curve".into(),
                        },
                    })
                    .collect(),
                w: m.w(),
                sample_rate: m.checkpoint.sample_rate,
                outputs: m.checkpoint.params.config().num_bands,
            })
            .collect(),
    )
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Status {
    /// Synthesis requests waiting for or holding the render lane.
    pub queue_depth: usize,
    pub rendering: bool,
    pub models: usize,
}

async fn status(State(st): State<Arc<AppState>>) -> Json<Status> {
    Json(Status {
        queue_depth: st.queued.load(Ordering::SeqCst),
        rendering: st.rendering.load(Ordering::SeqCst),
        models: st.models.len(),
    })
}
