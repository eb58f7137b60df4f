//! HTTP backend of the soft-brush annotation tool.
//!
//! Layout under the data directory: `images/<id>.pgm` holds the frames and
//! `labels/<id>.cmap` the confidence maps. Label writes are validated,
//! serialized per image id and replaced atomically on disk.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/images` | JSON list of `{id, width, height, has_label}` |
//! | GET | `/api/images/{id}/meta` | JSON `{id, width, height, has_label, revision}` |
//! | GET | `/api/images/{id}/raw` | PGM bytes |
//! | GET | `/api/labels/{id}` | `.cmap` bytes (all zero if unlabeled) |
//! | PUT | `/api/labels/{id}` | `.cmap` bytes in, JSON `{id, revision}` out |
//! | GET | `/api/channels` | JSON list of the six channel names |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use confseg::dataio::{decode_cmap, decode_pgm, encode_cmap, write_atomic};
use confseg::label::{Channel, ConfidenceMap};
use serde::Serialize;
use tokio::sync::RwLock;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub bind: SocketAddr,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), static_dir: None, bind: DEFAULT_BIND.parse().expect("valid address") }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown image {0:?}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

/// Revision state of one image's label.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Session {
    pub revision: u64,
    /// Seconds since the Unix epoch of the last accepted write.
    pub last_modified: Option<u64>,
}

#[derive(Debug, Default)]
struct Shared {
    locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
    sessions: Mutex<HashMap<String, Session>>,
}

#[derive(Debug, Clone)]
pub struct AppState {
    data_dir: Arc<PathBuf>,
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: Arc::new(data_dir.into()), shared: Arc::default() }
    }

    fn image_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("images").join(format!("{id}.pgm"))
    }

    fn label_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("labels").join(format!("{id}.cmap"))
    }

    fn lock_for(&self, id: &str) -> Arc<RwLock<()>> {
        let mut locks = self.shared.locks.lock().expect("lock table poisoned");
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn session(&self, id: &str) -> Session {
        self.shared.sessions.lock().expect("session table poisoned").get(id).copied().unwrap_or_default()
    }

    fn bump(&self, id: &str) -> Session {
        let mut sessions = self.shared.sessions.lock().expect("session table poisoned");
        let s = sessions.entry(id.to_string()).or_default();
        s.revision += 1;
        s.last_modified = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
        *s
    }
}

/// Ids are file stems; anything that could escape the data directory is rejected.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

fn read_dims(path: &Path, id: &str) -> Result<(usize, usize), ApiError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::NotFound(id.to_string()),
        _ => ApiError::Internal(format!("{}: {e}", path.display())),
    })?;
    let image = decode_pgm(&bytes).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    Ok(image.dims())
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ImageEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub has_label: bool,
}

fn list_blocking(state: &AppState) -> Result<Vec<ImageEntry>, ApiError> {
    let dir = state.data_dir.join("images");
    let entries = match std::fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ApiError::Internal(format!("{}: {e}", dir.display()))),
    };
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ApiError::Internal(e.to_string()))?.path();
        if path.extension().is_some_and(|x| x == "pgm") {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)) {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let (width, height) = read_dims(&state.image_path(&id), &id)?;
            let has_label = state.label_path(&id).exists();
            Ok(ImageEntry { id, width, height, has_label })
        })
        .collect()
}

async fn list_images(State(state): State<AppState>) -> Result<Json<Vec<ImageEntry>>, ApiError> {
    Ok(Json(blocking(move || list_blocking(&state)).await?))
}

#[derive(Debug, Serialize)]
struct ImageMeta {
    id: String,
    width: usize,
    height: usize,
    has_label: bool,
    revision: u64,
}

async fn image_meta(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ImageMeta>, ApiError> {
    if !valid_id(&id) {
        return Err(ApiError::NotFound(id));
    }
    let revision = state.session(&id).revision;
    let meta = blocking(move || {
        let (width, height) = read_dims(&state.image_path(&id), &id)?;
        let has_label = state.label_path(&id).exists();
        Ok(ImageMeta { id, width, height, has_label, revision })
    })
    .await?;
    Ok(Json(meta))
}

fn octets(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"))], bytes).into_response()
}

async fn image_raw(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    if !valid_id(&id) {
        return Err(ApiError::NotFound(id));
    }
    let path = state.image_path(&id);
    let bytes = blocking(move || {
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ApiError::NotFound(id.clone()),
            _ => ApiError::Internal(e.to_string()),
        })
    })
    .await?;
    Ok(octets(bytes))
}

async fn get_label(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    if !valid_id(&id) {
        return Err(ApiError::NotFound(id));
    }
    let lock = state.lock_for(&id);
    let _guard = lock.read().await;
    let revision = state.session(&id).revision;
    let bytes = blocking(move || {
        let (w, h) = read_dims(&state.image_path(&id), &id)?;
        match std::fs::read(state.label_path(&id)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let empty = ConfidenceMap::zeros(w, h).map_err(|e| ApiError::Internal(e.to_string()))?;
                Ok(encode_cmap(&empty))
            }
            Err(e) => Err(ApiError::Internal(e.to_string())),
        }
    })
    .await?;
    let mut resp = octets(bytes);
    resp.headers_mut().insert("x-label-revision", HeaderValue::from(revision));
    Ok(resp)
}

#[derive(Debug, Serialize)]
struct PutResponse {
    id: String,
    revision: u64,
}

async fn put_label(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<PutResponse>, ApiError> {
    if !valid_id(&id) {
        return Err(ApiError::NotFound(id));
    }
    let lock = state.lock_for(&id);
    let _guard = lock.write().await;
    let st = state.clone();
    let key = id.clone();
    blocking(move || {
        let dims = read_dims(&st.image_path(&key), &key)?;
        let cmap = decode_cmap(&body).map_err(|e| ApiError::Invalid(e.to_string()))?;
        if cmap.dims() != dims {
            return Err(ApiError::Invalid(format!(
                "dimension mismatch: label {}x{}, image {}x{}",
                cmap.width(),
                cmap.height(),
                dims.0,
                dims.1
            )));
        }
        let path = st.label_path(&key);
        std::fs::create_dir_all(path.parent().expect("label path has a parent")).map_err(|e| ApiError::Internal(e.to_string()))?;
        write_atomic(&path, &body).map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    let session = state.bump(&id);
    log::info!("label {id} saved, revision {}", session.revision);
    Ok(Json(PutResponse { id, revision: session.revision }))
}

async fn channels() -> Json<Vec<&'static str>> {
    Json(Channel::ALL.iter().map(|c| c.name()).collect())
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}/meta", get(image_meta))
        .route("/api/images/{id}/raw", get(image_raw))
        .route("/api/labels/{id}", get(get_label).put(put_label))
        .route("/api/channels", get(channels))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let app = router(AppState::new(&config.data_dir), config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    log::info!("annotation service on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
