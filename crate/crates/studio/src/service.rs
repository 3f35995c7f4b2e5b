//! HTTP API.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/api/artworks` | 201 record (JSON body, or multipart with `request` and `dish_image`) |
//! | GET | `/api/artworks?limit&offset` | 200 page ordered by `(created_at, id)` |
//! | GET | `/api/artworks/{id}` | 200 record |
//! | GET | `/api/artworks/{id}/image` | 200 `image/png` |
//! | POST | `/api/artworks/{id}/feedback` | 204 |
//! | GET | `/api/styles` | 200 style summaries |
//! | GET | `/api/styles/{id}/preview` | 200 `image/png` |
//! | GET | `/api/health` | 200 |
//!
//! Error bodies are `{"field": ..., "message": ...}`.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use callig_core::aesthetics::{StyleEngine, StyleRegistry};
use callig_core::raster::{decode_rgb, encode_rgb_png, load_rgb};

use crate::config::StudioConfig;
use crate::engine::{Engine, FieldError, GenerationRequest, PipelineError};
use crate::records::{now_timestamp, ArtworkRecord, Store, StoreError};

/// Largest JSON body accepted outside of uploads.
const MAX_JSON_BYTES: usize = 64 * 1024;
const MAX_PAGE: usize = 100;
const DEFAULT_PAGE: usize = 20;
/// Seeds stay below 2^53 so JSON clients keep them exact.
const SEED_MASK: u64 = (1 << 53) - 1;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            field: field.into(),
            message: message.into(),
        }
    }

    fn invalid(e: FieldError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.field, e.message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("internal error: {e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "server", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "field": self.field, "message": self.message }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Field(f) => Self::invalid(f),
            PipelineError::Unavailable(m) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "model", m),
            other => Self::internal(other),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::internal(e)
    }
}

/// Engine, store and styles behind the API; also usable without HTTP.
pub struct Studio {
    pub config: StudioConfig,
    pub store: Store,
    engine: Option<Engine>,
    load_error: Option<String>,
    styles: StyleEngine,
}

impl Studio {
    /// Opens the store and tries to load the model; a missing model is not
    /// fatal, generation requests then answer 503.
    pub fn open(config: StudioConfig) -> anyhow::Result<Self> {
        let engine = Engine::from_config(&config).map_err(|e| {
            log::warn!("model not loaded: {e}");
            e.to_string()
        });
        Self::assemble(config, engine)
    }

    /// Uses an already built engine, or none.
    pub fn with_engine(config: StudioConfig, engine: Option<Engine>) -> anyhow::Result<Self> {
        Self::assemble(config, engine.ok_or_else(|| "no model configured".to_string()))
    }

    fn assemble(config: StudioConfig, engine: Result<Engine, String>) -> anyhow::Result<Self> {
        let store = Store::open(&config.data_dir)?;
        let styles = StyleEngine::new(match &config.styles_dir {
            Some(dir) => StyleRegistry::load_dir(dir)?,
            None => StyleRegistry::builtin(),
        });
        let (engine, load_error) = match engine {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e)),
        };
        Ok(Self {
            config,
            store,
            engine,
            load_error,
            styles,
        })
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.as_ref()
    }

    fn require_engine(&self) -> Result<&Engine, ApiError> {
        self.engine.as_ref().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "model",
                self.load_error.clone().unwrap_or_else(|| "model not loaded".into()),
            )
        })
    }

    fn logo(&self, logo_id: Option<&str>) -> Result<Option<RgbImage>, ApiError> {
        let Some(id) = logo_id else { return Ok(None) };
        let path = self.store.logo_path(id);
        if !path.exists() {
            return Err(ApiError::invalid(FieldError::new("logo_id", format!("no logo named {id:?}"))));
        }
        load_rgb(&path).map(Some).map_err(ApiError::internal)
    }

    fn render(
        &self,
        request: &GenerationRequest,
        seed: u64,
        dish: Option<&[u8]>,
        id: &str,
    ) -> Result<crate::engine::PipelineOutput, ApiError> {
        let engine = self.require_engine()?;
        let dish = match dish {
            Some(bytes) => Some(decode_rgb(bytes).map_err(|e| {
                ApiError::invalid(FieldError::new("dish_image", format!("not a decodable image: {e}")))
            })?),
            None => None,
        };
        let logo = self.logo(request.logo_id.as_deref())?;
        Ok(engine.run(request, seed, dish.as_ref(), logo.as_ref(), id)?)
    }

    /// Runs the pipeline and persists the record. Blocking.
    pub fn create(&self, mut request: GenerationRequest, dish: Option<Vec<u8>>) -> Result<ArtworkRecord, ApiError> {
        request.validate().map_err(ApiError::invalid)?;
        self.require_engine()?;
        let seed = request.seed.unwrap_or_else(|| rand::random::<u64>() & SEED_MASK);
        request.seed = Some(seed);
        let id = uuid::Uuid::new_v4().to_string();
        let output = self.render(&request, seed, dish.as_deref(), &id)?;
        let record = ArtworkRecord::new(
            &id,
            now_timestamp(),
            request,
            &output,
            &self.store.image_path(&id),
            dish.is_some(),
        );
        self.store.insert(&record, &output.png, dish.as_deref())?;
        Ok(record)
    }

    /// Renders a stored record again from its request, seed and upload.
    pub fn rerender(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let record = self
            .store
            .get(id)?
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "id", format!("no artwork {id}")))?;
        let seed = record.request.seed.expect("stored requests carry a seed");
        let dish = self.store.dish(id)?;
        Ok(self.render(&record.request, seed, dish.as_deref(), id)?.png)
    }
}

#[derive(Clone)]
struct AppState {
    studio: Arc<Studio>,
    workers: Arc<Semaphore>,
    timeout: Duration,
    max_upload: usize,
}

pub fn router(studio: Arc<Studio>) -> Router {
    let state = AppState {
        workers: Arc::new(Semaphore::new(studio.config.workers)),
        timeout: Duration::from_secs(studio.config.request_timeout_secs),
        max_upload: studio.config.max_upload_bytes,
        studio,
    };
    Router::new()
        .route("/api/artworks", post(create_artwork).get(list_artworks))
        .route("/api/artworks/{id}", get(get_artwork))
        .route("/api/artworks/{id}/image", get(get_image))
        .route("/api/artworks/{id}/feedback", post(post_feedback))
        .route("/api/styles", get(list_styles))
        .route("/api/styles/{id}/preview", get(style_preview))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

/// Parses JSON, naming the offending field on failure.
fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        let field = if let Some(rest) = msg.strip_prefix("unknown field `") {
            rest.split('`').next().unwrap_or("body").to_string()
        } else if let Some(rest) = msg.strip_prefix("missing field `") {
            rest.split('`').next().unwrap_or("body").to_string()
        } else if path == "." || path.is_empty() {
            "body".to_string()
        } else {
            path.split(['.', '[']).next().unwrap_or("body").to_string()
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, field, msg)
    })
}

async fn read_body(body: Body, limit: usize, field: &str) -> Result<Vec<u8>, ApiError> {
    axum::body::to_bytes(body, limit).await.map(|b| b.to_vec()).map_err(|_| {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, field, format!("exceeds {limit} bytes"))
    })
}

async fn parse_create(state: &AppState, req: Request) -> Result<(GenerationRequest, Option<Vec<u8>>), ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    if content_type.starts_with("multipart/form-data") {
        let mut mp = Multipart::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "body", e.body_text()))?;
        let mut request = None;
        let mut dish = None;
        let bad_part = |e: axum::extract::multipart::MultipartError| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "body", e.body_text())
        };
        while let Some(mut field) = mp.next_field().await.map_err(bad_part)? {
            let name = field.name().unwrap_or("").to_string();
            let limit = match name.as_str() {
                "request" => MAX_JSON_BYTES,
                "dish_image" => state.max_upload,
                other => {
                    return Err(ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        other,
                        "unexpected multipart part; send `request` and `dish_image`",
                    ))
                }
            };
            let mut buf = Vec::new();
            while let Some(chunk) = field.chunk().await.map_err(bad_part)? {
                if buf.len() + chunk.len() > limit {
                    return Err(ApiError::new(
                        StatusCode::PAYLOAD_TOO_LARGE,
                        name,
                        format!("exceeds the {limit}-byte limit"),
                    ));
                }
                buf.extend_from_slice(&chunk);
            }
            match name.as_str() {
                "request" => request = Some(parse_json::<GenerationRequest>(&buf)?),
                _ => dish = Some(buf),
            }
        }
        let request = request.ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "request", "multipart body needs a `request` part")
        })?;
        Ok((request, dish))
    } else if content_type.starts_with("application/json") || content_type.is_empty() {
        let bytes = read_body(req.into_body(), MAX_JSON_BYTES, "body").await?;
        Ok((parse_json(&bytes)?, None))
    } else {
        Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "content-type",
            "use application/json or multipart/form-data",
        ))
    }
}

async fn create_artwork(State(state): State<AppState>, req: Request) -> Result<Response, ApiError> {
    let (request, dish) = parse_create(&state, req).await?;
    request.validate().map_err(ApiError::invalid)?;
    state.studio.require_engine()?;
    let _permit = state.workers.acquire().await.map_err(ApiError::internal)?;
    let studio = Arc::clone(&state.studio);
    let job = tokio::task::spawn_blocking(move || studio.create(request, dish));
    let record = match tokio::time::timeout(state.timeout, job).await {
        Ok(joined) => joined.map_err(ApiError::internal)??,
        Err(_) => {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "request",
                format!("generation exceeded the {}s budget", state.timeout.as_secs()),
            ))
        }
    };
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

fn parse_param(q: &HashMap<String, String>, key: &str, default: usize, max: usize) -> Result<usize, ApiError> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n <= max)
            .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, key, format!("must be an integer in 0..={max}"))),
    }
}

#[derive(Serialize)]
struct Page {
    items: Vec<ArtworkRecord>,
    total: usize,
    limit: usize,
    offset: usize,
}

async fn list_artworks(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Page>, ApiError> {
    let limit = parse_param(&q, "limit", DEFAULT_PAGE, MAX_PAGE)?;
    if limit == 0 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "limit", "must be at least 1"));
    }
    let offset = parse_param(&q, "offset", 0, usize::MAX >> 1)?;
    let (items, total) = state.studio.store.list(limit, offset)?;
    Ok(Json(Page {
        items,
        total,
        limit,
        offset,
    }))
}

fn not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "id", format!("no artwork {id}"))
}

async fn get_artwork(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ArtworkRecord>, ApiError> {
    state.studio.store.get(&id)?.map(Json).ok_or_else(|| not_found(&id))
}

async fn get_image(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if state.studio.store.get(&id)?.is_none() {
        return Err(not_found(&id));
    }
    let png = state.studio.store.image(&id)?.ok_or_else(|| not_found(&id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    rating: i64,
    #[serde(default)]
    comment: String,
}

async fn post_feedback(State(state): State<AppState>, Path(id): Path<String>, body: Body) -> Result<StatusCode, ApiError> {
    let bytes = read_body(body, MAX_JSON_BYTES, "body").await?;
    let fb: FeedbackBody = parse_json(&bytes)?;
    if !(1..=5).contains(&fb.rating) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "rating", "must be an integer from 1 to 5"));
    }
    if state.studio.store.add_feedback(&id, fb.rating as u8, &fb.comment, &now_timestamp())? {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(not_found(&id))
    }
}

#[derive(Serialize)]
struct StyleEntry {
    style_id: String,
    display_name: String,
    preview_url: String,
}

async fn list_styles(State(state): State<AppState>) -> Json<Vec<StyleEntry>> {
    Json(
        state
            .studio
            .styles
            .registry
            .summaries()
            .into_iter()
            .map(|s| StyleEntry {
                preview_url: format!("/api/styles/{}/preview", s.style_id),
                style_id: s.style_id,
                display_name: s.display_name,
            })
            .collect(),
    )
}

async fn style_preview(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let style = state
        .studio
        .styles
        .registry
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "style_id", format!("no style {id}")))?;
    let png = encode_rgb_png(&style.reference_image).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let s = &state.studio;
    Json(match s.engine() {
        Some(e) => json!({
            "model_loaded": true,
            "vocabulary_size": e.vocabulary().size(),
            "epoch": e.checkpoint().epoch,
            "candidates": e.candidates,
            "group_size": e.group_size,
        }),
        None => json!({ "model_loaded": false, "reason": s.load_error }),
    })
}

/// Binds `host:port` from the configuration and serves until interrupted.
pub async fn serve(studio: Arc<Studio>) -> anyhow::Result<()> {
    let addr = format!("{}:{}", studio.config.host, studio.config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(studio))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
