//! HTTP session service: create a session from an upload or a synthetic seed,
//! add point prompts, run the evolution and fetch rendered frames.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | `POST` | `/sessions` | `{"seed": n}`, `{"image_png_base64": "..."}` or a raw `image/png` body |
//! | `POST` | `/sessions/{id}/prompts` | `{"x": .., "y": ..}` |
//! | `POST` | `/sessions/{id}/run` | `{"steps"?, "dt"?, "mu"?, "eps"?}` |
//! | `GET` | `/sessions/{id}/frames/{index}` | `?kind=phi\|velocity\|contour_overlay\|mask&run=n` |
//! | `GET` | `/healthz` | |

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use amodal_ls::dataset::{generate, SceneConfig};
use amodal_ls::metrics::{iou, occluded_iou};
use amodal_ls::pipeline::Pipeline;
use amodal_ls::render;
use amodal_ls::sdf::mask_from_phi;
use amodal_ls::{EvolutionConfig, PointPrompt, ScalarField};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;

pub use error::ApiError;
pub use session::{GroundTruth, Session};

pub const MAX_IMAGE_SIDE: usize = 512;
pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub session_ttl: Duration,
    /// Upper bound on stored frames (phi plus velocity) per session.
    pub frame_cap: usize,
    pub scene: SceneConfig,
    /// Origin allowed by CORS; `None` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session_ttl: Duration::from_secs(30 * 60),
            frame_cap: 256,
            scene: SceneConfig::default(),
            cors_origin: None,
        }
    }
}

type SessionMap = HashMap<String, Arc<Mutex<Session>>>;

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    checkpoint_hash: Arc<str>,
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<SessionMap>>,
}

impl AppState {
    pub fn new(
        pipeline: Pipeline,
        checkpoint_hash: impl Into<String>,
        config: ServiceConfig,
    ) -> Self {
        Self {
            pipeline: Arc::new(pipeline),
            checkpoint_hash: checkpoint_hash.into().into(),
            config: Arc::new(config),
            sessions: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub async fn session_count(&self) -> usize {
        self.sessions.lock().await.len()
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut sessions = self.sessions.lock().await;
        self.expire(&mut sessions).await;
        sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    async fn expire(&self, sessions: &mut SessionMap) {
        let ttl = self.config.session_ttl;
        let mut stale = Vec::new();
        for (id, s) in sessions.iter() {
            // a session busy in another request is in use, not stale
            if let Ok(s) = s.try_lock() {
                if s.updated.elapsed() > ttl {
                    stale.push(id.clone());
                }
            }
        }
        for id in stale {
            sessions.remove(&id);
        }
    }
}

pub fn router(state: AppState) -> Router {
    let origin = match &state.config.cors_origin {
        Some(o) => HeaderValue::from_str(o)
            .map(AllowOrigin::exact)
            .unwrap_or_else(|_| AllowOrigin::any()),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::IF_NONE_MATCH])
        .expose_headers([header::ETAG]);
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/prompts", post(add_prompt))
        .route("/sessions/{id}/run", post(run_evolution))
        .route("/sessions/{id}/frames/{index}", get(get_frame))
        .layer(DefaultBodyLimit::max(4 << 20))
        .layer(cors)
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, state).await
}

/// Serves on an already bound listener until Ctrl-C.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn healthz(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "checkpoint": &*state.checkpoint_hash }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    seed: Option<u64>,
    image_png_base64: Option<String>,
}

fn decode_upload(bytes: &[u8]) -> Result<ScalarField, ApiError> {
    let image = render::decode_gray_png(bytes)
        .map_err(|e| ApiError::unprocessable("invalid_image", e.to_string()))?;
    let (w, h) = image.dims();
    if w > MAX_IMAGE_SIDE || h > MAX_IMAGE_SIDE {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!("{w}x{h} exceeds {MAX_IMAGE_SIDE}x{MAX_IMAGE_SIDE}"),
        ));
    }
    if w % 2 != 0 || h % 2 != 0 || w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(ApiError::unprocessable(
            "invalid_image",
            format!("{w}x{h}: both dimensions must be even and at least {MIN_IMAGE_SIDE}"),
        ));
    }
    Ok(image)
}

async fn create_session(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let is_png = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("image/png"));
    let (image, truth) = if is_png {
        (decode_upload(&body)?, None)
    } else {
        let req: CreateRequest = serde_json::from_slice(&body)
            .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?;
        match (req.seed, req.image_png_base64) {
            (Some(seed), None) => {
                let cfg = state.config.scene.clone();
                let sample = tokio::task::spawn_blocking(move || generate(seed, &cfg))
                    .await
                    .map_err(|e| ApiError::internal(e.to_string()))??;
                let truth = GroundTruth {
                    amodal: sample.amodal,
                    visible: sample.visible,
                    occlusion_rate: sample.occlusion_rate,
                };
                (sample.image, Some(truth))
            }
            (None, Some(b64)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| ApiError::bad_request(format!("invalid base64: {e}")))?;
                (decode_upload(&bytes)?, None)
            }
            _ => {
                return Err(ApiError::bad_request(
                    "provide exactly one of `seed` or `image_png_base64`",
                ))
            }
        }
    };
    let (w, h) = image.dims();
    let synthetic = truth.is_some();
    let occlusion_rate = truth.as_ref().map(|t| t.occlusion_rate);
    let id = session::new_session_id();
    let mut sessions = state.sessions.lock().await;
    state.expire(&mut sessions).await;
    sessions.insert(id.clone(), Arc::new(Mutex::new(Session::new(image, truth))));
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "id": id,
            "width": w,
            "height": h,
            "synthetic": synthetic,
            "occlusion_rate": occlusion_rate,
        })),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptRequest {
    x: f64,
    y: f64,
}

async fn add_prompt(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PromptRequest>,
) -> Result<Json<Value>, ApiError> {
    let session = state.session(&id).await?;
    let mut s = session.lock().await;
    let (w, h) = s.image.dims();
    let p = PointPrompt::new(req.x, req.y);
    if !p.in_bounds(w, h) {
        return Err(ApiError::unprocessable(
            "invalid_prompt",
            format!("prompt ({}, {}) outside {w}x{h} image", req.x, req.y),
        ));
    }
    s.prompts.push(p);
    s.touch();
    Ok(Json(json!({ "prompts": prompt_list(&s.prompts) })))
}

fn prompt_list(prompts: &[PointPrompt]) -> Vec<[f64; 2]> {
    prompts.iter().map(|p| [p.x, p.y]).collect()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    steps: Option<usize>,
    dt: Option<f64>,
    mu: Option<f64>,
    eps: Option<f64>,
}

#[derive(Serialize)]
struct RunSummary {
    run: u64,
    steps: usize,
    dt: f64,
    mu: f64,
    eps: f64,
    phi_frames: usize,
    velocity_frames: usize,
    /// Foreground pixel count of phi_0 .. phi_T.
    areas: Vec<usize>,
    used_fallback: bool,
    evicted: bool,
    metrics: Option<Value>,
}

async fn run_evolution(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RunSummary>, ApiError> {
    let req: RunRequest = if body.is_empty() {
        RunRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?
    };
    let base = state.pipeline.evolution;
    let config = EvolutionConfig::new(
        req.steps.unwrap_or(base.steps()),
        req.dt.unwrap_or(base.dt()),
        req.mu.unwrap_or(base.mu()),
        req.eps.unwrap_or(base.heaviside_eps()),
    )
    .map_err(|e| ApiError::unprocessable("invalid_parameter", e.to_string()))?;

    let session = state.session(&id).await?;
    let mut s = session.lock().await;
    if s.prompts.is_empty() {
        return Err(ApiError::conflict("add at least one prompt before running"));
    }
    let pipeline = Arc::clone(&state.pipeline);
    let (image, prompts) = (s.image.clone(), s.prompts.clone());
    let run_prompts = prompts.clone();
    let run = tokio::task::spawn_blocking(move || {
        pipeline
            .as_ref()
            .clone()
            .with_evolution(config)
            .run(&image, &prompts)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    let metrics = s.truth.as_ref().map(|t| -> Result<Value, ApiError> {
        Ok(json!({
            "iou_full": iou(&run.mask, &t.amodal)?,
            "iou_occ": occluded_iou(&run.mask, &t.amodal, &t.visible)?,
            "phi0_iou_full": iou(&mask_from_phi(&run.phis[0]), &t.amodal)?,
            "occlusion_rate": t.occlusion_rate,
        }))
    });
    let metrics = metrics.transpose()?;
    let summary_areas = run.areas();
    let used_fallback = run.init.used_fallback;
    let velocity_frames = run.velocities.len();
    let phi_frames = run.phis.len();
    let run_id = s.push_run(config, run_prompts, run, state.config.frame_cap);
    s.touch();
    Ok(Json(RunSummary {
        run: run_id,
        steps: config.steps(),
        dt: config.dt(),
        mu: config.mu(),
        eps: config.heaviside_eps(),
        phi_frames,
        velocity_frames,
        areas: summary_areas,
        used_fallback,
        evicted: s.evicted,
        metrics,
    }))
}

#[derive(Deserialize)]
struct FrameQuery {
    kind: Option<String>,
    run: Option<u64>,
}

async fn get_frame(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
    Query(q): Query<FrameQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    let stored = s.run(q.run).ok_or_else(|| match q.run {
        Some(r) if r < s.next_run => ApiError::not_found(format!("run {r} was evicted")),
        Some(r) => ApiError::not_found(format!("unknown run {r}")),
        None => ApiError::not_found("no run yet"),
    })?;
    let run = &stored.run;
    let kind = q.kind.as_deref().unwrap_or("phi");
    let missing = || ApiError::not_found(format!("no {kind} frame at index {index}"));
    let png = match kind {
        "phi" => render::signed_field_png(run.phis.get(index).ok_or_else(missing)?),
        "velocity" => render::signed_field_png(run.velocities.get(index).ok_or_else(missing)?),
        "contour_overlay" => render::contour_overlay_png(
            &s.image,
            run.phis.get(index).ok_or_else(missing)?,
            &stored.prompts,
        ),
        "mask" => render::mask_png(&mask_from_phi(run.phis.get(index).ok_or_else(missing)?)),
        other => return Err(ApiError::not_found(format!("unknown frame kind {other:?}"))),
    };
    let etag = format!("\"{}\"", hex::encode(Sha256::digest(&png)));
    let cache = (header::CACHE_CONTROL, "public, max-age=31536000, immutable");
    if headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        == Some(etag.as_str())
    {
        return Ok((
            StatusCode::NOT_MODIFIED,
            [cache, (header::ETAG, etag.as_str())],
        )
            .into_response());
    }
    Ok((
        StatusCode::OK,
        [
            (header::CONTENT_TYPE, "image/png"),
            cache,
            (header::ETAG, etag.as_str()),
        ],
        png,
    )
        .into_response())
}
