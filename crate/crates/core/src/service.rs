//! HTTP/JSON session service.
//!
//! Volumes are registered once and referenced by id. Each session accepts one mutation
//! at a time; a second concurrent mutation is answered with 409.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::energy::EnergyConfig;
use crate::error::Error;
use crate::metrics::component_stats;
use crate::session::{Session, UserPoint};
use crate::surface::{MeshParams, SurfaceState};
use crate::volume::io::{encode_payload, volume_from_parts, VolumeHeader};
use crate::volume::{load_volume, VolumeKind, VoxelVolume};

/// Request/response header carrying a JSON [`VolumeHeader`] next to a raw payload.
pub const VOLUME_HEADER: &str = "x-volume-header";
/// Response header with the `width,height` of a slice payload.
pub const SLICE_DIMS: &str = "x-slice-dims";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub max_sessions: usize,
    /// Allowed CORS origins; `"*"` allows any.
    pub cors_allowlist: Vec<String>,
    pub energy: EnergyConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: 8080,
            data_dir: PathBuf::from("."),
            max_sessions: 16,
            cors_allowlist: Vec::new(),
            energy: EnergyConfig::interactive(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_sessions == 0 {
            return Err(Error::InvalidParameter("max_sessions must be at least 1".into()));
        }
        self.energy.validate()
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownPoint(_) => StatusCode::NOT_FOUND,
            Error::Io { .. } => StatusCode::NOT_FOUND,
            Error::NonFiniteGradient | Error::FitDiverged(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct SessionSlot {
    session: Arc<RwLock<Session>>,
    version: AtomicU64,
}

pub struct AppState {
    cfg: ServiceConfig,
    volumes: RwLock<HashMap<String, Arc<VoxelVolume>>>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    next_volume: AtomicU64,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            cfg,
            volumes: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            next_volume: AtomicU64::new(1),
            next_session: AtomicU64::new(1),
        })
    }

    /// Registers a volume directly (used by the CLI and tests).
    pub async fn insert_volume(&self, v: VoxelVolume) -> String {
        let id = format!("v{}", self.next_volume.fetch_add(1, Ordering::Relaxed));
        self.volumes.write().await.insert(id.clone(), Arc::new(v));
        id
    }

    async fn volume(&self, id: &str) -> ApiResult<Arc<VoxelVolume>> {
        self.volumes
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown volume {id}")))
    }

    async fn slot(&self, id: &str) -> ApiResult<Arc<SessionSlot>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid payload: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

/// Resolves a path inside the data directory, rejecting absolute paths and `..`.
fn data_path(root: &Path, rel: &str) -> ApiResult<PathBuf> {
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(ApiError::bad_request("volume path must stay inside the data directory"));
    }
    Ok(root.join(rel))
}

#[derive(Deserialize)]
struct RegisterByPath {
    path: String,
}

async fn post_volume(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let vol = match headers.get(VOLUME_HEADER) {
        Some(h) => {
            let header: VolumeHeader = serde_json::from_slice(h.as_bytes())
                .map_err(|e| ApiError::bad_request(format!("invalid volume header: {e}")))?;
            volume_from_parts(&header, &body)?
        }
        None => {
            let req: RegisterByPath = parse(&body)?;
            let path = data_path(&st.cfg.data_dir, &req.path)?;
            blocking(move || load_volume(path)).await??
        }
    };
    let id = st.insert_volume(vol).await;
    Ok((StatusCode::CREATED, Json(json!({ "volume_id": id })) ).into_response())
}

#[derive(Deserialize)]
struct MeshSpec {
    t: usize,
    p: usize,
    #[serde(default)]
    scale: u32,
}

#[derive(Deserialize)]
struct CreateSession {
    prob_id: String,
    image_id: Option<String>,
    mesh: Option<MeshSpec>,
    cfg: Option<EnergyConfig>,
}

#[derive(Serialize)]
struct SurfaceReply {
    session_id: String,
    version: u64,
    surface: SurfaceState,
}

async fn post_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse(&body)?;
    if st.sessions.read().await.len() >= st.cfg.max_sessions {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session limit reached"));
    }
    let prob = st.volume(&req.prob_id).await?;
    let image = match &req.image_id {
        Some(id) => Some(st.volume(id).await?),
        None => None,
    };
    let params = match req.mesh {
        Some(m) => MeshParams::new(m.t, m.p, m.scale)?,
        None => MeshParams::new(12, 16, 0)?,
    };
    let cfg = req.cfg.unwrap_or_else(|| st.cfg.energy.clone());
    let session = blocking(move || Session::create(image, prob, params, cfg)).await??;
    let surface = session.surface().to_state();

    let mut sessions = st.sessions.write().await;
    if sessions.len() >= st.cfg.max_sessions {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session limit reached"));
    }
    let id = format!("s{}", st.next_session.fetch_add(1, Ordering::Relaxed));
    sessions.insert(
        id.clone(),
        Arc::new(SessionSlot {
            session: Arc::new(RwLock::new(session)),
            version: AtomicU64::new(1),
        }),
    );
    let reply = SurfaceReply {
        session_id: id,
        version: 1,
        surface,
    };
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

async fn get_session(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let sess = slot.session.read().await;
    let mask = sess.mask();
    let stats = component_stats(&mask);
    Ok(Json(json!({
        "session_id": id,
        "version": slot.version.load(Ordering::SeqCst),
        "surface": sess.surface().to_state(),
        "points": sess.points(),
        "metrics": {
            "residuals_mm": sess.residuals(),
            "volume_mm3": stats.volume_mm3,
            "components": stats.components,
            "cavities": stats.cavities,
        },
    }))
    .into_response())
}

/// Runs a mutation with exclusive access, or answers 409 if one is already running.
async fn mutate<T: Send + 'static>(
    slot: Arc<SessionSlot>,
    f: impl FnOnce(&mut Session) -> crate::Result<T> + Send + 'static,
) -> ApiResult<(T, SurfaceState, u64)> {
    let mut guard = slot
        .session
        .clone()
        .try_write_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another request is using this session"))?;
    let (out, surface, guard) = blocking(move || {
        let out = f(&mut guard);
        let surface = guard.surface().to_state();
        (out, surface, guard)
    })
    .await?;
    let out = out?;
    let version = slot.version.fetch_add(1, Ordering::SeqCst) + 1;
    drop(guard);
    Ok((out, surface, version))
}

#[derive(Deserialize)]
struct AddPoint {
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
}

async fn post_point(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Response> {
    let req: AddPoint = parse(&body)?;
    let slot = st.slot(&id).await?;
    let ((point, iterations, converged, residual), surface, version) = mutate(slot, move |s| {
        let (p, res): (UserPoint, _) = s.add_point([req.x_mm, req.y_mm, req.z_mm])?;
        let residual = (s.surface().evaluate(p.theta, p.phi) - p.rho).abs();
        Ok((p, res.iterations, res.converged, residual))
    })
    .await?;
    Ok(Json(json!({
        "session_id": id,
        "version": version,
        "surface": surface,
        "point_id": point.id,
        "residual_mm": residual,
        "iterations": iterations,
        "converged": converged,
    }))
    .into_response())
}

async fn delete_point(
    State(st): State<Arc<AppState>>,
    UrlPath((id, pid)): UrlPath<(String, u64)>,
) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let (_, surface, version) = mutate(slot, move |s| s.remove_point(pid).map(|_| ())).await?;
    Ok(Json(json!({ "session_id": id, "version": version, "surface": surface })).into_response())
}

async fn post_undo(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let (_, surface, version) = mutate(slot, |s| s.undo()).await?;
    Ok(Json(json!({ "session_id": id, "version": version, "surface": surface })).into_response())
}

#[derive(Deserialize)]
struct SliceQuery {
    axis: usize,
    index: usize,
    layer: String,
}

/// One axis-aligned slab as row-major f32 values; returns `(width, height, data)`.
pub fn extract_slice(v: &VoxelVolume, axis: usize, index: usize) -> crate::Result<(usize, usize, Vec<f32>)> {
    let [nx, ny, nz] = v.dims();
    let bad = || Error::InvalidParameter(format!("slice {index} on axis {axis} is outside the volume"));
    let (w, h) = match axis {
        0 if index < nx => (ny, nz),
        1 if index < ny => (nx, nz),
        2 if index < nz => (nx, ny),
        _ => return Err(bad()),
    };
    let mut out = Vec::with_capacity(w * h);
    for b in 0..h {
        for a in 0..w {
            out.push(match axis {
                0 => v.get(index, a, b),
                1 => v.get(a, index, b),
                _ => v.get(a, b, index),
            });
        }
    }
    Ok((w, h, out))
}

async fn get_slice(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let sess = slot.session.read().await;
    let (w, h, data) = match q.layer.as_str() {
        "prob" => extract_slice(sess.prob(), q.axis, q.index)?,
        "image" => {
            let img = sess.image().ok_or_else(|| ApiError::not_found("session has no image"))?;
            extract_slice(img, q.axis, q.index)?
        }
        "mask" => extract_slice(&sess.mask(), q.axis, q.index)?,
        other => return Err(ApiError::bad_request(format!("unknown layer {other:?}"))),
    };
    let mut resp = encode_payload(&data).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    headers.insert(SLICE_DIMS, HeaderValue::from_str(&format!("{w},{h}")).expect("ascii"));
    Ok(resp)
}

async fn get_log(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let log = slot.session.read().await.log().to_vec();
    Ok(Json(log).into_response())
}

async fn get_mesh(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let obj = slot.session.read().await.export().obj;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], obj).into_response())
}

async fn get_mask(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let mask = slot.session.read().await.mask();
    debug_assert_eq!(mask.kind(), VolumeKind::Mask);
    let header_json = serde_json::to_string(&VolumeHeader::for_volume(&mask, "mask.raw"))
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut resp = encode_payload(mask.data()).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    headers.insert(
        VOLUME_HEADER,
        HeaderValue::from_str(&header_json).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
    );
    Ok(resp)
}

fn cors(cfg: &ServiceConfig) -> Option<CorsLayer> {
    if cfg.cors_allowlist.is_empty() {
        return None;
    }
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any).expose_headers(Any);
    if cfg.cors_allowlist.iter().any(|o| o == "*") {
        return Some(layer.allow_origin(Any));
    }
    let origins: Vec<HeaderValue> = cfg
        .cors_allowlist
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    Some(layer.allow_origin(AllowOrigin::list(origins)))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors(&state.cfg);
    let app = Router::new()
        .route("/volumes", post(post_volume))
        .route("/sessions", post(post_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/points", post(post_point))
        .route("/sessions/{id}/points/{pid}", delete(delete_point))
        .route("/sessions/{id}/undo", post(post_undo))
        .route("/sessions/{id}/slice", get(get_slice))
        .route("/sessions/{id}/mesh", get(get_mesh))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/mask", get(get_mask))
        .with_state(state);
    match cors {
        Some(layer) => app.layer(layer),
        None => app,
    }
}

/// Binds `0.0.0.0:port` and serves until the task is cancelled.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    cfg.validate().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    if !cfg.data_dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("data directory {} is not readable", cfg.data_dir.display()),
        ));
    }
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port)).await?;
    axum::serve(listener, router(AppState::new(cfg))).await
}
