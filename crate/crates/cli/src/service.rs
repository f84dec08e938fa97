//! Read-mostly HTTP service over a directory of scene bundles.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use osu_core::geometry::Point;
use osu_core::pipeline::{build_scene, bundle_to_json, load_bundle, save_bundle, BuildOptions, SceneInput};
use osu_core::roi::{ambiguity_report, resolve_point, resolve_region, QueryMode};
use osu_core::segmenter::Backend;
use osu_core::{BoundingBox, FrameLexicon, SceneBundle};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub type Scenes = HashMap<String, Arc<SceneBundle>>;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read bundle directory {path}: {source}")]
    Dir { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Bundle { path: PathBuf, message: String },
    #[error("scene {id} appears in both {first} and {second}")]
    Duplicate { id: String, first: PathBuf, second: PathBuf },
}

/// Loads every `*.json` bundle in `dir`; any invalid bundle is an error.
pub fn load_scene_dir(dir: &Path) -> Result<Scenes, LoadError> {
    let dir_err = |source| LoadError::Dir {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(dir_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut scenes = Scenes::new();
    let mut origin: HashMap<String, PathBuf> = HashMap::new();
    for path in paths {
        let file = std::fs::File::open(&path).map_err(|e| LoadError::Bundle {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let bundle = load_bundle(std::io::BufReader::new(file)).map_err(|e| LoadError::Bundle {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if let Some(first) = origin.get(&bundle.image_id) {
            return Err(LoadError::Duplicate {
                id: bundle.image_id.clone(),
                first: first.clone(),
                second: path,
            });
        }
        origin.insert(bundle.image_id.clone(), path);
        scenes.insert(bundle.image_id.clone(), Arc::new(bundle));
    }
    Ok(scenes)
}

/// Shared service state. Readers clone the inner `Arc` and never block on
/// a build; a build swaps in a new map.
pub struct AppState {
    scenes: RwLock<Arc<Scenes>>,
    bundle_dir: PathBuf,
    builder: Option<Builder>,
}

struct Builder {
    lexicon: Arc<FrameLexicon>,
    backend: Option<Backend>,
}

impl AppState {
    pub fn new(scenes: Scenes, bundle_dir: PathBuf) -> Self {
        AppState {
            scenes: RwLock::new(Arc::new(scenes)),
            bundle_dir,
            builder: None,
        }
    }

    /// Enables `POST /scenes`.
    pub fn with_builder(mut self, lexicon: FrameLexicon, backend: Option<Backend>) -> Self {
        self.builder = Some(Builder {
            lexicon: Arc::new(lexicon),
            backend,
        });
        self
    }

    pub fn snapshot(&self) -> Arc<Scenes> {
        Arc::clone(&self.scenes.read().expect("scene lock poisoned"))
    }

    fn insert(&self, bundle: SceneBundle) {
        let mut guard = self.scenes.write().expect("scene lock poisoned");
        let mut next = (**guard).clone();
        next.insert(bundle.image_id.clone(), Arc::new(bundle));
        *guard = Arc::new(next);
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

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene {id:?}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

fn scene(state: &AppState, id: &str) -> Result<Arc<SceneBundle>, ApiError> {
    state.snapshot().get(id).cloned().ok_or_else(|| ApiError::not_found(id))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSummary {
    pub image_id: String,
    pub caption: String,
    pub width: usize,
    pub height: usize,
    pub degraded: bool,
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snapshot = state.snapshot();
    let mut scenes: Vec<SceneSummary> = snapshot
        .values()
        .map(|b| SceneSummary {
            image_id: b.image_id.clone(),
            caption: b.caption.clone(),
            width: b.width,
            height: b.height,
            degraded: b.provenance.degraded,
        })
        .collect();
    scenes.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Json(json!({ "scenes": scenes }))
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn get_scene(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(json_text(bundle_to_json(&*scene(&state, &id)?)))
}

fn safe_relative(p: &str) -> Option<&Path> {
    let path = Path::new(p);
    path.components().all(|c| matches!(c, Component::Normal(_))).then_some(path)
}

async fn get_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let bundle = scene(&state, &id)?;
    let image_ref = bundle
        .image_ref
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("scene {id:?} has no image")))?;
    let rel = safe_relative(image_ref)
        .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, format!("image path {image_ref:?} leaves the bundle directory")))?;
    let bytes = tokio::fs::read(state.bundle_dir.join(rel))
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("image {image_ref:?}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], Bytes::from(bytes)).into_response())
}

/// Body of `POST /scenes/{id}/query`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum QueryBody {
    Region { region: BoundingBox },
    Point {
        x: f64,
        y: f64,
        #[serde(default)]
        mode: QueryMode,
    },
}

async fn query_scene(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let bundle = scene(&state, &id)?;
    let Json(body) = body?;
    let bad = |e: osu_core::roi::RoiError| ApiError::new(StatusCode::BAD_REQUEST, e.to_string());
    Ok(match body {
        QueryBody::Point { x, y, mode } => Json(resolve_point(&bundle, Point::new(x, y), mode).map_err(bad)?).into_response(),
        QueryBody::Region { region } => {
            let hits = resolve_region(&bundle, &region).map_err(bad)?;
            Json(json!({ "region": region, "hits": hits })).into_response()
        }
    })
}

#[derive(Debug, Deserialize)]
struct AmbiguityParams {
    spacing: Option<usize>,
}

async fn ambiguity(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<AmbiguityParams>,
) -> Result<Response, ApiError> {
    let bundle = scene(&state, &id)?;
    let spacing = NonZeroUsize::new(params.spacing.unwrap_or(8))
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "spacing must be positive"))?;
    let report = tokio::task::spawn_blocking(move || ambiguity_report(&bundle, spacing))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(report).into_response())
}

async fn build(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SceneInput>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Some(builder) = &state.builder else {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "scene building is disabled"));
    };
    let Json(input) = body?;
    if safe_relative(&input.image_id).is_none_or(|p| p.components().count() != 1) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("image id {:?} is not a file name", input.image_id)));
    }
    let lexicon = Arc::clone(&builder.lexicon);
    let backend = builder.backend.clone();
    let dir = state.bundle_dir.clone();
    let bundle = tokio::task::spawn_blocking(move || -> Result<SceneBundle, ApiError> {
        let bundle = build_scene(&input, &lexicon, backend.as_ref(), BuildOptions::default())
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let path = dir.join(format!("{}.json", bundle.image_id));
        let tmp = dir.join(format!(".{}.json.tmp", bundle.image_id));
        let write = || -> std::io::Result<()> {
            let file = std::fs::File::create(&tmp)?;
            save_bundle(&bundle, std::io::BufWriter::new(file)).map_err(std::io::Error::other)?;
            std::fs::rename(&tmp, &path)
        };
        write().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("saving bundle: {e}")))?;
        Ok(bundle)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let body = bundle_to_json(&bundle);
    state.insert(bundle);
    Ok((StatusCode::CREATED, json_text(body)).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes).post(build))
        .route("/scenes/{id}", get(get_scene))
        .route("/scenes/{id}/image", get(get_image))
        .route("/scenes/{id}/query", post(query_scene))
        .route("/scenes/{id}/ambiguity", get(ambiguity))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state)
}

/// Binds `addr`; fails immediately when the port is taken.
pub async fn bind(addr: &str) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
