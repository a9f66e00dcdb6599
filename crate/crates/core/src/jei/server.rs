//! HTTP front end for JEI sessions.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Contour, CorrectionPoint, EditResult, GraphFile, JeiSession, DEFAULT_RADIUS_MM};
use crate::error::Error;
use crate::volume::{Volume3D, VolumeHeader};

type Shared = Arc<Mutex<JeiSession>>;

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Shared>>,
    next: AtomicU64,
}

impl AppState {
    fn insert(&self, make: impl FnOnce(String) -> crate::Result<JeiSession>) -> crate::Result<String> {
        let id = format!("s{:06}", self.next.fetch_add(1, Ordering::SeqCst) + 1);
        let s = make(id.clone())?;
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok(id)
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError(Error::NotFound(format!("session {id}"))))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::InvalidInput(_) | Error::GeometryMismatch(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            Error::Format(_) => (StatusCode::BAD_REQUEST, "bad_format"),
            Error::Infeasible => (StatusCode::UNPROCESSABLE_ENTITY, "infeasible"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(ErrorBody { code: code.into(), message: self.0.to_string() })).into_response()
    }
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(Error::InvalidInput(msg.into()))
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

/// Multipart fields: `session` (a saved session) or `graph` (a graph file,
/// solved on arrival), plus optional `volume` payloads with a matching
/// `volume_header` JSON each, in time order.
async fn create(State(st): State<Arc<AppState>>, mut mp: Multipart) -> Result<Json<Created>, ApiError> {
    let mut session = None;
    let mut graph = None;
    let mut headers = Vec::new();
    let mut payloads = Vec::new();
    while let Some(field) = mp.next_field().await.map_err(|e| bad(e.to_string()))? {
        let name = field.name().unwrap_or("").to_string();
        let bytes = field.bytes().await.map_err(|e| bad(e.to_string()))?;
        match name.as_str() {
            "session" => session = Some(bytes),
            "graph" => graph = Some(bytes),
            "volume_header" => headers.push(serde_json::from_slice::<VolumeHeader>(&bytes).map_err(|e| bad(format!("volume header: {e}")))?),
            "volume" => payloads.push(bytes),
            other => return Err(bad(format!("unexpected field {other}"))),
        }
    }
    if headers.len() != payloads.len() {
        return Err(bad("each volume needs a volume_header"));
    }
    let st2 = st.clone();
    let id = tokio::task::spawn_blocking(move || -> crate::Result<String> {
        let volumes: Vec<Volume3D> = headers.iter().zip(&payloads).map(|(h, b)| Volume3D::from_le_bytes(h, b)).collect::<crate::Result<_>>()?;
        match (session, graph) {
            (Some(s), None) => st2.insert(|id| {
                let mut sess = JeiSession::from_bytes(id, &s)?;
                if !volumes.is_empty() {
                    JeiSession::check_volumes(&sess.base, &volumes)?;
                    sess.volumes = volumes;
                }
                Ok(sess)
            }),
            (None, Some(g)) => {
                let gf = GraphFile::from_bytes(&g)?;
                st2.insert(|id| JeiSession::create(id, gf, volumes))
            }
            _ => Err(Error::InvalidInput("send exactly one of session or graph".into())),
        }
    })
    .await
    .map_err(|e| ApiError(Error::InvalidInput(e.to_string())))??;
    Ok(Json(Created { id }))
}

async fn surfaces(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = st.get(&id)?;
    let body = serde_json::to_vec(s.lock().unwrap().solution()).map_err(|e| ApiError(Error::Format(e.to_string())))?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], body).into_response())
}

#[derive(Deserialize)]
pub struct SliceQuery {
    pub axis: String,
    pub index: usize,
    pub wmin: Option<f64>,
    pub wmax: Option<f64>,
    #[serde(default)]
    pub t: usize,
}

#[derive(Serialize, Deserialize)]
pub struct SliceBody {
    pub width: usize,
    pub height: usize,
    pub png_base64: String,
    pub contours: Vec<Contour>,
}

fn axis_index(a: &str) -> Option<usize> {
    match a {
        "x" | "0" => Some(0),
        "y" | "1" => Some(1),
        "z" | "2" => Some(2),
        _ => None,
    }
}

async fn slice(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<SliceQuery>) -> Result<Json<SliceBody>, ApiError> {
    let s = st.get(&id)?;
    let axis = axis_index(&q.axis).ok_or_else(|| bad(format!("unknown axis {}", q.axis)))?;
    let window = match (q.wmin, q.wmax) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(bad("give both wmin and wmax or neither")),
    };
    let sl = s.lock().unwrap().slice(q.t, axis, q.index, window)?;
    let png = sl.to_png()?;
    Ok(Json(SliceBody {
        width: sl.width,
        height: sl.height,
        png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        contours: sl.contours,
    }))
}

#[derive(Deserialize)]
pub struct CorrectionBody {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub object: usize,
    pub surface: usize,
    #[serde(default)]
    pub t: usize,
    pub radius: Option<f64>,
}

async fn correct(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<CorrectionBody>) -> Result<Json<EditResult>, ApiError> {
    let s = st.get(&id)?;
    let cp = CorrectionPoint { position: [b.x, b.y, b.z], t: b.t, object: b.object, surface: b.surface, radius_mm: b.radius.unwrap_or(DEFAULT_RADIUS_MM) };
    let r = tokio::task::spawn_blocking(move || s.lock().unwrap().apply_correction(&cp))
        .await
        .map_err(|e| ApiError(Error::InvalidInput(e.to_string())))??;
    Ok(Json(r))
}

async fn undo(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<EditResult>, ApiError> {
    let s = st.get(&id)?;
    let r = tokio::task::spawn_blocking(move || s.lock().unwrap().undo())
        .await
        .map_err(|e| ApiError(Error::InvalidInput(e.to_string())))??;
    Ok(Json(r))
}

/// Saved session file, for reloading later.
async fn download(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Vec<u8>, ApiError> {
    let s = st.get(&id)?;
    let b = s.lock().unwrap().to_bytes()?;
    Ok(b)
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}/surfaces", get(surfaces))
        .route("/sessions/{id}/slice", get(slice))
        .route("/sessions/{id}/corrections", post(correct))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/session", get(download))
        .layer(DefaultBodyLimit::max(2 << 30))
        .with_state(state)
}

pub fn app() -> Router {
    router(Arc::new(AppState::default()))
}

/// Serves until the process is stopped.
pub fn serve(addr: SocketAddr) -> crate::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        axum::serve(listener, app()).await?;
        Ok(())
    })
}
