//! HTTP service that lets a person make the decisions of a live episode.
//!
//! Routes:
//! - `POST /sessions` creates a session and runs the first observation.
//! - `GET /sessions/{id}/state` returns the pending view plus map layers.
//! - `POST /sessions/{id}/decision` applies one decision.
//! - `GET /sessions/{id}/trace` downloads the episode trace as JSONL.
//! - `GET /assets/{ref}?session={id}` resolves an image reference to a
//!   schematic descriptor.

pub mod session;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use snapmem_core::agent::policy::Decision;
use snapmem_core::agent::{Episode, EpisodeError};
use snapmem_core::model::ConfigError;
use snapmem_core::sim::{generate_scene, generate_tasks, Scene, SceneParams, Task, TaskKind};
use snapmem_core::{EpisodeConfig, FrameId, FrontierId, ObjectId};

pub use session::{Phase, SessionStore, SESSION_TTL};
use session::{frame_descriptor, outline, Session};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), field: None }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

/// Parses a JSON body, reporting the path of the offending field.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let err = ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.inner().to_string());
        if path == "." {
            err
        } else {
            err.field(path)
        }
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub seed: u64,
    #[serde(default)]
    pub rooms: Option<u32>,
    #[serde(default)]
    pub objects_per_room: Option<u32>,
}

/// Body of `POST /sessions`. The scene is given inline or generated from a
/// seed; without a task one is generated from the scene.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub scene: Option<Scene>,
    #[serde(default)]
    pub generate: Option<GenerateSpec>,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub task_kind: Option<TaskKind>,
    #[serde(default)]
    pub cfg: Option<EpisodeConfig>,
}

fn episode_error(e: EpisodeError) -> ApiError {
    let invalid = |code, msg: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, msg);
    match e {
        EpisodeError::InvalidTask(msg) => {
            let field = msg.split_once(':').map(|(f, _)| format!("task.{f}"));
            ApiError { field, ..invalid("invalid_task", msg) }
        }
        EpisodeError::Config(ConfigError::Invalid { field, .. }) => {
            invalid("invalid_config", e.to_string()).field(format!("cfg.{field}"))
        }
        EpisodeError::InvalidDecision(msg) => invalid("invalid_decision", msg),
        EpisodeError::Finished => ApiError::conflict("episode already finished"),
        EpisodeError::NoSpawn => invalid("invalid_scene", e.to_string()).field("scene.spawn_points"),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "runtime", other.to_string()),
    }
}

fn build_episode(req: CreateRequest) -> Result<Episode, ApiError> {
    let scene = match (req.scene, req.generate) {
        (Some(s), None) => s,
        (None, Some(g)) => {
            let d = SceneParams::default();
            let params = SceneParams {
                rooms: g.rooms.unwrap_or(d.rooms),
                objects_per_room: g.objects_per_room.unwrap_or(d.objects_per_room),
                ..d
            };
            generate_scene(g.seed, params).map_err(|e| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene", e.to_string()).field("generate")
            })?
        }
        _ => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "give exactly one of scene or generate")
                .field("scene"))
        }
    };
    let task = match req.task {
        Some(t) => t,
        None => generate_tasks(&scene, scene.seed, 1, Some(req.task_kind.unwrap_or(TaskKind::ObjectGoal)))
            .pop()
            .ok_or_else(|| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene", "scene has no objects").field("scene.objects")
            })?,
    };
    Episode::new(Arc::new(scene), task, req.cfg.unwrap_or_default(), "human").map_err(episode_error)
}

type AppState = Arc<SessionStore>;

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/decision", post(post_decision))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/assets/{image_ref}", get(get_asset))
        .with_state(store)
}

fn lookup(store: &SessionStore, id: &str) -> Result<Arc<Session>, ApiError> {
    store.get(id).ok_or_else(|| ApiError::not_found("session"))
}

async fn create_session(State(store): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let episode = tokio::task::spawn_blocking(move || build_episode(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "runtime", e.to_string()))??;
    let s = store.insert(episode);
    let body = json!({
        "id": s.id,
        "created_at": s.created_at,
        "phase": s.phase(),
        "state_url": format!("/sessions/{}/state", s.id),
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Serialize)]
struct StateResponse<'a> {
    id: &'a str,
    phase: Phase,
    #[serde(flatten)]
    state: &'a session::StateDoc,
}

async fn get_state(State(store): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = lookup(&store, &id)?;
    let published = s.published();
    let phase = s.phase();
    Ok(Json(StateResponse { id: &s.id, phase, state: &published.state }).into_response())
}

async fn post_decision(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let s = lookup(&store, &id)?;
    let decision: Decision = parse_body(&body)?;
    let worker = s.clone();
    let result = tokio::task::spawn_blocking(move || {
        let guard = worker.begin_advance().ok_or_else(|| ApiError::conflict("another decision is being applied"))?;
        worker.apply(&guard, decision).map_err(|e| match e {
            EpisodeError::InvalidDecision(msg) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision", msg).field("id"),
            other => episode_error(other),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "runtime", e.to_string()))??;
    let body = json!({
        "result": result,
        "phase": s.phase(),
        "state_url": format!("/sessions/{}/state", s.id),
    });
    Ok(Json(body).into_response())
}

async fn get_trace(State(store): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = lookup(&store, &id)?;
    let published = s.published();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], published.trace_jsonl.clone()).into_response())
}

#[derive(Debug, Deserialize)]
struct AssetQuery {
    session: Option<String>,
}

/// Splits `frame-3`, `frontier-2` or `crop-3-7` into its kind and numbers.
fn parse_ref(r: &str) -> Option<(&str, Vec<u32>)> {
    let (kind, rest) = r.split_once('-')?;
    let nums: Option<Vec<u32>> = rest.split('-').map(|n| n.parse().ok()).collect();
    Some((kind, nums?))
}

async fn get_asset(
    State(store): State<AppState>,
    Path(image_ref): Path<String>,
    Query(q): Query<AssetQuery>,
) -> Result<Response, ApiError> {
    let s = match q.session {
        Some(id) => lookup(&store, &id)?,
        None => store.only_session().ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "session query parameter required").field("session")
        })?,
    };
    let published = s.published();
    let memory = &published.memory;
    let missing = || ApiError::not_found("asset");
    let body = match parse_ref(&image_ref).ok_or_else(missing)? {
        ("frame", n) if n.len() == 1 => {
            let d = frame_descriptor(memory, FrameId(n[0])).ok_or_else(missing)?;
            json!({ "kind": "frame", "descriptor": d })
        }
        ("frontier", n) if n.len() == 1 => {
            let f = memory.frontiers.get(&FrontierId(n[0])).ok_or_else(missing)?;
            json!({
                "kind": "frontier",
                "id": f.id,
                "anchor": f.anchor,
                "observed_from": f.observed_from,
                "observed_step": f.observed_step,
                "outline": outline(&f.region),
            })
        }
        ("crop", n) if n.len() == 2 => {
            let d = frame_descriptor(memory, FrameId(n[0])).ok_or_else(missing)?;
            let glyph = d.objects.into_iter().find(|o| o.id == ObjectId(n[1])).ok_or_else(missing)?;
            json!({ "kind": "crop", "frame": n[0], "pose": d.pose, "object": glyph })
        }
        _ => return Err(missing()),
    };
    Ok(Json(body).into_response())
}

/// Serves until the listener fails, purging idle sessions once a minute.
pub async fn serve(listener: tokio::net::TcpListener, store: AppState) -> std::io::Result<()> {
    let sweeper = store.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.purge_expired(Instant::now());
        }
    });
    axum::serve(listener, router(store)).await
}
