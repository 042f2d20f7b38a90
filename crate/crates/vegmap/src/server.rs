//! HTTP service over a project store. All routes live under `/api`; errors
//! are JSON objects `{code, message, detail}`.

use std::collections::HashMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::mpsc::UnboundedSender;
use vegmap_core::imaging::{compute_hue_spectrum, HueRangeSet};
use vegmap_core::learners::CvReport;
use vegmap_core::mapper::{class_area_stats, PredictionMap};

use crate::config::{parse_color, ClassConfig};
use crate::jobs::{self, Shared};
use crate::ops;
use crate::store::{ArtifactKind, JobKind, NotFound, Project};

/// Malformed request body or query.
#[derive(Debug)]
pub struct BadRequest(pub String);

impl fmt::Display for BadRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadRequest {}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Value,
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        let (status, code) = if e.downcast_ref::<NotFound>().is_some() {
            (StatusCode::NOT_FOUND, "not_found")
        } else if e.downcast_ref::<BadRequest>().is_some() {
            (StatusCode::BAD_REQUEST, "bad_request")
        } else if e.chain().any(|c| c.is::<std::io::Error>()) {
            (StatusCode::INTERNAL_SERVER_ERROR, "internal")
        } else {
            (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input")
        };
        let detail: Vec<String> = e.chain().skip(1).map(ToString::to_string).collect();
        Self {
            status,
            code,
            message: e.to_string(),
            detail: json!(detail),
        }
    }
}

impl From<vegmap_core::Error> for ApiError {
    fn from(e: vegmap_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn bad(msg: impl Into<String>) -> ApiError {
    anyhow::Error::new(BadRequest(msg.into())).into()
}

#[derive(Clone)]
pub struct AppState {
    project: Shared,
    queue: UnboundedSender<String>,
}

impl AppState {
    fn read(&self) -> std::sync::RwLockReadGuard<'_, Project> {
        self.project.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Project> {
        self.project.write().unwrap_or_else(|e| e.into_inner())
    }
}

/// Builds the router and starts the job worker; call inside a tokio runtime.
pub fn router(project: Project) -> Router {
    let project = Arc::new(RwLock::new(project));
    let queue = jobs::start_worker(project.clone());
    Router::new()
        .route("/api/project", get(get_project))
        .route("/api/classes", post(add_class))
        .route("/api/classes/{class}/hue-ranges", get(get_hue_ranges).put(put_hue_ranges))
        .route("/api/images", get(list_images).post(upload_image))
        .route("/api/images/{id}/full.png", get(full_png))
        .route("/api/images/{id}/masks/{class}", get(get_mask).put(put_mask))
        .route("/api/images/{id}/spectrum", get(spectrum))
        .route("/api/select", post(|s: State<AppState>, b: Bytes| submit(s, JobKind::Select, b)))
        .route("/api/embed", post(|s: State<AppState>, b: Bytes| submit(s, JobKind::Embed, b)))
        .route("/api/train", post(|s: State<AppState>, b: Bytes| submit(s, JobKind::Train, b)))
        .route("/api/cv", post(|s: State<AppState>, b: Bytes| submit(s, JobKind::Cv, b)))
        .route("/api/predict", post(|s: State<AppState>, b: Bytes| submit(s, JobKind::Predict, b)))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/manifests/{id}", get(get_manifest))
        .route("/api/features/{id}", get(get_features))
        .route("/api/models/{id}", get(get_model))
        .route("/api/reports/{id}", get(get_report))
        .route("/api/maps/{id}", get(get_map))
        .route("/api/maps/{id}/overlay.png", get(overlay))
        .route("/api/maps/{id}/stats", get(map_stats))
        .fallback(|| async { ApiError::from(crate::store::not_found("route", "")) })
        .with_state(AppState { project, queue })
}

/// Opens the project, binds and serves until interrupted.
pub async fn serve(root: &Path, addr: SocketAddr) -> Result<()> {
    let project = Project::open(root).with_context(|| format!("refusing to serve {}", root.display()))?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("serving {} on http://{}", root.display(), listener.local_addr()?);
    axum::serve(listener, router(project))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn parse_body(body: &[u8]) -> ApiResult<Value> {
    if body.is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| bad(format!("request body is not valid JSON: {e}")))
}

fn with_type(content_type: &'static str, bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, content_type)], bytes).into_response()
}

async fn get_project(State(s): State<AppState>) -> ApiResult<Response> {
    let p = s.read();
    Ok(Json(serde_json::to_value(p.view())?).into_response())
}

async fn add_class(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let class: ClassConfig = serde_json::from_value(parse_body(&body)?).map_err(|e| bad(e.to_string()))?;
    parse_color(&class.color)?;
    s.write().add_class(class.clone())?;
    Ok((StatusCode::CREATED, Json(class)).into_response())
}

async fn get_hue_ranges(State(s): State<AppState>, UrlPath(class): UrlPath<String>) -> ApiResult<Json<Value>> {
    let ranges = s.read().hue_ranges(&class)?;
    Ok(Json(serde_json::to_value(ranges.unwrap_or_default())?))
}

async fn put_hue_ranges(State(s): State<AppState>, UrlPath(class): UrlPath<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let ranges: HueRangeSet = serde_json::from_value(parse_body(&body)?).map_err(|e| bad(e.to_string()))?;
    s.write().set_hue_ranges(&class, ranges.clone())?;
    Ok(Json(serde_json::to_value(ranges)?))
}

async fn list_images(State(s): State<AppState>) -> Json<Value> {
    Json(json!(s.read().images()))
}

async fn upload_image(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>, body: Bytes) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(bad("upload the PNG or JPEG bytes as the request body"));
    }
    let name = q.get("name").cloned().unwrap_or_default();
    let record = s.write().add_image(&body, &name)?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn full_png(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let img = s.read().image(&id)?;
    let max: Option<u32> = q
        .get("maxdim")
        .map(|v| v.parse().map_err(|_| bad(format!("maxdim `{v}` is not a positive integer"))))
        .transpose()?;
    let (w, h) = img.dims();
    let bytes = match max {
        Some(0) => return Err(bad("maxdim must be positive")),
        Some(m) if w.max(h) > m => {
            let scale = f64::from(m) / f64::from(w.max(h));
            let (nw, nh) = (
                ((f64::from(w) * scale).round() as u32).max(1),
                ((f64::from(h) * scale).round() as u32).max(1),
            );
            let small = image::imageops::resize(&img.to_image(), nw, nh, image::imageops::FilterType::Triangle);
            let mut out = std::io::Cursor::new(Vec::new());
            small.write_to(&mut out, image::ImageFormat::Png).map_err(anyhow::Error::from)?;
            out.into_inner()
        }
        _ => img.encode_png()?,
    };
    Ok(with_type("image/png", bytes))
}

async fn get_mask(State(s): State<AppState>, UrlPath((id, class)): UrlPath<(String, String)>) -> ApiResult<Response> {
    Ok(with_type("image/png", s.read().mask_bytes(&id, &class)?))
}

async fn put_mask(
    State(s): State<AppState>,
    UrlPath((id, class)): UrlPath<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let mask = s.write().put_mask(&id, &class, &body)?;
    Ok(Json(json!({ "image": id, "class": class, "mask": mask })))
}

async fn spectrum(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let class = q.get("class").ok_or_else(|| bad("query parameter `class` is required"))?;
    let (img, mask, default_sat) = {
        let p = s.read();
        (p.image(&id)?, p.mask(&id, class)?, p.config().sat_min)
    };
    let sat_min = match q.get("satmin") {
        Some(v) => v.parse().map_err(|_| bad(format!("satmin `{v}` is not a number")))?,
        None => default_sat,
    };
    let spectrum = compute_hue_spectrum(&img, &mask, sat_min)?;
    Ok(Json(serde_json::to_value(spectrum)?))
}

async fn submit(State(s): State<AppState>, kind: JobKind, body: Bytes) -> ApiResult<Response> {
    let body = parse_body(&body)?;
    let id = jobs::submit(&s.project, kind, body)?;
    s.queue
        .send(id.clone())
        .map_err(|_| anyhow::anyhow!("job worker has stopped"))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn get_job(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    Ok(Json(serde_json::to_value(s.read().job(&id)?)?))
}

async fn get_manifest(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(with_type("application/x-ndjson", s.read().artifact_bytes(&id, ArtifactKind::Manifest)?))
}

async fn get_features(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(with_type("text/csv", s.read().artifact_bytes(&id, ArtifactKind::Features)?))
}

async fn get_model(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(with_type("application/json", s.read().artifact_bytes(&id, ArtifactKind::Model)?))
}

/// JSON by default; `?format=csv` gives the tabular CV report.
async fn get_report(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let bytes = s.read().artifact_bytes(&id, ArtifactKind::Report)?;
    match q.get("format").map(String::as_str) {
        None | Some("json") => Ok(with_type("application/json", bytes)),
        Some("csv") => {
            let report: CvReport = serde_json::from_slice(&bytes)?;
            Ok(with_type("text/csv", report.to_csv(true)?.into_bytes()))
        }
        Some(other) => Err(bad(format!("unknown report format `{other}`"))),
    }
}

fn load_map(s: &AppState, id: &str) -> ApiResult<PredictionMap> {
    let bytes = s.read().artifact_bytes(id, ArtifactKind::Map)?;
    Ok(PredictionMap::from_json(std::str::from_utf8(&bytes).map_err(anyhow::Error::from)?)?)
}

async fn get_map(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(with_type("application/json", s.read().artifact_bytes(&id, ArtifactKind::Map)?))
}

/// `?classes=a,b` limits the tinted classes; `?alpha=` sets the blend.
async fn overlay(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let map = load_map(&s, &id)?;
    let alpha = match q.get("alpha") {
        Some(v) => v.parse().map_err(|_| bad(format!("alpha `{v}` is not a number")))?,
        None => 0.5,
    };
    let classes: Vec<String> = q
        .get("classes")
        .map(|c| c.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
        .unwrap_or_default();
    let (img, known) = {
        let p = s.read();
        let known: Vec<(String, [u8; 3])> = p.config().class_names().into_iter().zip(p.config().palette()?).collect();
        (p.image(&map.image_id)?, known)
    };
    let palette = ops::palette_for(&map.class_list, &known);
    let bytes = if q.contains_key("classes") && classes.is_empty() {
        img.encode_png()?
    } else {
        ops::overlay_png(&map, &img, &classes, &palette, alpha)?
    };
    Ok(with_type("image/png", bytes))
}

async fn map_stats(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let map = load_map(&s, &id)?;
    Ok(Json(json!(class_area_stats(&map))))
}
