//! HTTP backend of the annotation tool. Frames are the `<id>.png` files of
//! a data directory; markers persist as `<id>.markers.json` sidecars and
//! committed labels as `<id>_mask.png`, the layout `load_pairs` reads.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use dilseg::raster::encode_png;
use dilseg::spline::{fit_spline, rasterize, MarkerSet, RasterStatus, SplineContour};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8077;
pub const DEFAULT_SAMPLES: usize = 200;
pub const DEFAULT_THICKNESS: usize = 3;

pub struct AppState {
    dir: PathBuf,
    samples: usize,
    ui_dir: Option<PathBuf>,
    locks: Mutex<HashMap<String, Arc<AsyncMutex<()>>>>,
}

impl AppState {
    pub fn new(dir: impl Into<PathBuf>, samples: usize, ui_dir: Option<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            samples,
            ui_dir,
            locks: Mutex::new(HashMap::new()),
        }
    }

    fn lock_for(&self, id: &str) -> Arc<AsyncMutex<()>> {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        locks.entry(id.to_string()).or_default().clone()
    }

    /// Holds the frame's lock until the guard drops; commits to the frame
    /// answer 409 meanwhile.
    pub async fn lock_frame(&self, id: &str) -> OwnedMutexGuard<()> {
        self.lock_for(id).lock_owned().await
    }

    fn image_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.png"))
    }

    fn markers_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.markers.json"))
    }

    fn mask_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}_mask.png"))
    }

    fn frame_ids(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if !stem.ends_with("_mask") {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// The frame's `(width, height)`, or 404 for anything that is not a
    /// frame of this directory.
    fn frame(&self, id: &str) -> Result<(usize, usize), ApiError> {
        let valid = !id.is_empty() && !id.ends_with("_mask") && !id.contains(['/', '\\']) && !id.starts_with('.');
        let path = self.image_path(id);
        if !valid || !path.is_file() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown frame `{id}`")));
        }
        let (w, h) = image_dimensions(&path)?;
        Ok((w, h))
    }

    fn stored_markers(&self, id: &str) -> Result<Option<MarkerSet>, ApiError> {
        match std::fs::read(self.markers_path(id)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(ApiError::internal),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ApiError::internal(e)),
        }
    }
}

fn image_dimensions(path: &Path) -> Result<(usize, usize), ApiError> {
    let (w, h) = image::image_dimensions(path).map_err(ApiError::internal)?;
    Ok((w as usize, h as usize))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    fn invalid(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FrameInfo {
    pub id: String,
    pub annotated: bool,
    pub has_markers: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameList {
    pub frames: Vec<FrameInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MarkersBody {
    pub markers: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Preview {
    pub frame_id: String,
    pub polyline: Vec<(f64, f64)>,
    pub degree: usize,
    pub sample_count: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CommitBody {
    pub thickness: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CommitResult {
    pub frame_id: String,
    pub mask: String,
    pub status: String,
    pub foreground: usize,
}

async fn list_frames(State(st): State<Arc<AppState>>) -> Result<Json<FrameList>, ApiError> {
    let frames = st
        .frame_ids()
        .map_err(ApiError::internal)?
        .into_iter()
        .map(|id| FrameInfo {
            annotated: st.mask_path(&id).is_file(),
            has_markers: st.markers_path(&id).is_file(),
            id,
        })
        .collect();
    Ok(Json(FrameList { frames }))
}

async fn frame_image(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    st.frame(&id)?;
    let bytes = std::fs::read(st.image_path(&id)).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_markers(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<MarkerSet>, ApiError> {
    st.frame(&id)?;
    st.stored_markers(&id)?
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no markers stored for `{id}`")))
}

fn fit(st: &AppState, set: &MarkerSet, w: usize, h: usize) -> Result<SplineContour, ApiError> {
    fit_spline(set, st.samples, w, h).map_err(ApiError::invalid)
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::invalid)
}

async fn post_markers(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Preview>, ApiError> {
    let (w, h) = st.frame(&id)?;
    let body: MarkersBody = parse_json(&body)?;
    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let set = MarkerSet {
        frame_id: id.clone(),
        markers: body.markers,
        created_at,
    };
    let contour = fit(&st, &set, w, h)?;
    let _guard = st.lock_frame(&id).await;
    let doc = serde_json::to_vec_pretty(&set).map_err(ApiError::internal)?;
    std::fs::write(st.markers_path(&id), doc).map_err(ApiError::internal)?;
    Ok(Json(Preview {
        frame_id: id,
        polyline: contour.polyline,
        degree: contour.degree,
        sample_count: contour.sample_count,
    }))
}

async fn commit(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<CommitResult>, ApiError> {
    let (w, h) = st.frame(&id)?;
    let body: CommitBody = if body.is_empty() { CommitBody::default() } else { parse_json(&body)? };
    let thickness = body.thickness.unwrap_or(DEFAULT_THICKNESS);
    let Ok(_guard) = st.lock_for(&id).try_lock_owned() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("frame `{id}` is being committed by another request"),
        ));
    };
    let set = st
        .stored_markers(&id)?
        .ok_or_else(|| ApiError::invalid(format!("no markers stored for `{id}`")))?;
    let contour = fit(&st, &set, w, h)?;
    let (mask, status) = rasterize(&contour, thickness, w, h).map_err(ApiError::invalid)?;
    let name = format!("{id}_mask.png");
    std::fs::write(st.mask_path(&id), encode_png(&mask.to_gray8())).map_err(ApiError::internal)?;
    Ok(Json(CommitResult {
        frame_id: id,
        mask: name,
        status: match status {
            RasterStatus::Ok => "ok",
            RasterStatus::Clipped => "clipped",
        }
        .to_string(),
        foreground: mask.count(),
    }))
}

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<title>dilseg annotation</title>\n<p>No UI bundle configured. \
The API is served under <code>/frames</code>.</p>\n";

async fn placeholder_index() -> Response {
    ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], PLACEHOLDER_INDEX).into_response()
}

/// API routes, plus the UI bundle (or a placeholder page) at `/`.
pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/frames", get(list_frames))
        .route("/frames/{id}/image", get(frame_image))
        .route("/frames/{id}/markers", get(get_markers).post(post_markers))
        .route("/frames/{id}/commit", axum::routing::post(commit));
    let api = match &state.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    };
    api.with_state(state)
}

pub async fn serve(state: AppState, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    log::info!("annotation server on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
