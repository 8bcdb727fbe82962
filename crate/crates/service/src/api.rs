//! HTTP routes.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use blobspace_core::blobshape::{export_obj, extract_mesh, Shape, ShapeId};

use crate::config::MeshConfig;
use crate::error::ServiceError;
use crate::session::{ColorClass, Engine, MapDesign, Session};

type Shared<T> = Arc<RwLock<T>>;

/// Everything the handlers share.
#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub mesh: MeshConfig,
    pub data_dir: Option<PathBuf>,
    sessions: Shared<HashMap<String, Shared<Session>>>,
}

impl AppState {
    pub fn new(engine: Engine, mesh: MeshConfig, data_dir: Option<PathBuf>) -> Self {
        AppState {
            engine: Arc::new(engine),
            mesh,
            data_dir,
            sessions: Arc::default(),
        }
    }

    /// Reload every `*.jsonl` session log found in the data directory.
    pub async fn restore(&self) -> Result<usize, ServiceError> {
        let Some(dir) = &self.data_dir else {
            return Ok(0);
        };
        let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut restored = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_none_or(|x| x != "jsonl") {
                continue;
            }
            let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
            else {
                continue;
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            match self.engine.import(id.clone(), &text) {
                Ok(session) => {
                    self.sessions
                        .write()
                        .await
                        .insert(id, Arc::new(RwLock::new(session)));
                    restored += 1;
                }
                Err(e) => log::warn!("skipping session log {}: {e}", path.display()),
            }
        }
        Ok(restored)
    }

    pub async fn session(&self, id: &str) -> Result<Shared<Session>, ServiceError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    async fn insert(&self, session: Session) -> Result<String, ServiceError> {
        let id = session.id.clone();
        if let Some(dir) = &self.data_dir {
            std::fs::write(dir.join(format!("{id}.jsonl")), session.export())
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        self.sessions
            .write()
            .await
            .insert(id.clone(), Arc::new(RwLock::new(session)));
        Ok(id)
    }

    fn persist(&self, session: &Session, from: usize) -> Result<(), ServiceError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{}.jsonl", session.id)))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        for event in &session.events()[from..] {
            let line =
                serde_json::to_string(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        Ok(())
    }

    /// Run a mutation under the session's exclusive lock on a blocking thread
    /// and append the resulting events to the on-disk log.
    async fn mutate<T, F>(&self, id: &str, f: F) -> Result<T, ServiceError>
    where
        T: Send + 'static,
        F: FnOnce(&Engine, &mut Session) -> Result<T, ServiceError> + Send + 'static,
    {
        let lock = self.session(id).await?;
        let mut guard = lock.write_owned().await;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let before = guard.events().len();
            let out = f(&state.engine, &mut guard)?;
            state.persist(&guard, before)?;
            Ok(out)
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
    }

    /// Run a read-only computation under a shared lock on a blocking thread.
    async fn read<T, F>(&self, id: &str, f: F) -> Result<T, ServiceError>
    where
        T: Send + 'static,
        F: FnOnce(&Engine, &Session) -> Result<T, ServiceError> + Send + 'static,
    {
        let lock = self.session(id).await?;
        let guard = lock.read_owned().await;
        let engine = self.engine.clone();
        tokio::task::spawn_blocking(move || f(&engine, &guard))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))?
    }

    async fn find_shape(&self, id: &ShapeId, session: Option<&str>) -> Result<Shape, ServiceError> {
        if let Some(s) = self.engine.atlas.shape(id) {
            return Ok(s.clone());
        }
        let candidates: Vec<Shared<Session>> = match session {
            Some(sid) => vec![self.session(sid).await?],
            None => self.sessions.read().await.values().cloned().collect(),
        };
        for lock in candidates {
            if let Some(s) = lock.read().await.resolve(&self.engine, id) {
                return Ok(s.clone());
            }
        }
        Err(ServiceError::NotFound(format!("shape {id}")))
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    if body.is_empty() {
        return Err(ServiceError::BadRequest("request body is empty".into()));
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

pub fn router(state: AppState, cors_origins: &[String]) -> Router {
    let origins = if cors_origins.is_empty() {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(
            cors_origins
                .iter()
                .filter_map(|o| HeaderValue::from_str(o).ok()),
        )
    };
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/import", post(import_session))
        .route("/sessions/{id}/prompt", post(prompt))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/choose", post(choose))
        .route("/sessions/{id}/roi-field", get(roi_field))
        .route("/sessions/{id}/tree", get(tree))
        .route("/sessions/{id}/export", get(export))
        .route("/map", get(map))
        .route("/shapes/{id}/blobs", get(blobs))
        .route("/shapes/{id}/mesh", get(mesh))
        .layer(cors)
        .with_state(state)
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

fn fresh_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

async fn create_session(
    State(state): State<AppState>,
) -> Result<Json<SessionCreated>, ServiceError> {
    let session = state.engine.new_session(fresh_id());
    let session_id = state.insert(session).await?;
    Ok(Json(SessionCreated { session_id }))
}

async fn import_session(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<SessionCreated>, ServiceError> {
    let text = std::str::from_utf8(&body)
        .map_err(|e| ServiceError::BadRequest(format!("log is not UTF-8: {e}")))?
        .to_string();
    let engine = state.engine.clone();
    let session = tokio::task::spawn_blocking(move || engine.import(fresh_id(), &text))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let session_id = state.insert(session).await?;
    Ok(Json(SessionCreated { session_id }))
}

#[derive(Deserialize)]
struct PromptRequest {
    text: String,
}

async fn prompt(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let request: PromptRequest = parse_body(&body)?;
    let out = state
        .mutate(&id, move |engine, session| {
            engine.prompt(session, &request.text)
        })
        .await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct GenerateRequest {
    shape_id: ShapeId,
    selected_parts: Vec<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn generate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let request: GenerateRequest = parse_body(&body)?;
    let (out, tree) = state
        .mutate(&id, move |engine, session| {
            let out = engine.generate(
                session,
                &request.shape_id,
                &request.selected_parts,
                request.seed,
            )?;
            Ok((out, session.tree_json()))
        })
        .await?;
    Ok(Json(serde_json::json!({
        "children": out.children,
        "adjectives": out.adjectives,
        "provider": out.provider,
        "fallback": out.fallback,
        "tree": tree,
    })))
}

#[derive(Deserialize)]
struct ChooseRequest {
    chosen_shape_id: ShapeId,
    other_shape_ids: Vec<ShapeId>,
}

async fn choose(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let request: ChooseRequest = parse_body(&body)?;
    let field_version = state
        .mutate(&id, move |engine, session| {
            engine.choose(session, &request.chosen_shape_id, &request.other_shape_ids)
        })
        .await?;
    Ok(Json(serde_json::json!({ "field_version": field_version })))
}

async fn roi_field(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    let (field, version) = state
        .read(&id, |engine, session| {
            Ok((session.field(engine)?, session.field_version()))
        })
        .await?;
    let mut value =
        serde_json::to_value(field).map_err(|e| ServiceError::Internal(e.to_string()))?;
    value["field_version"] = version.into();
    Ok(Json(value))
}

async fn tree(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    let lock = state.session(&id).await?;
    let json = lock.read().await.tree_json();
    Ok(Json(json))
}

async fn export(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServiceError> {
    let lock = state.session(&id).await?;
    let text = lock.read().await.export();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text))
}

#[derive(Deserialize)]
struct MapQuery {
    session: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct MapResponse {
    pub points: Vec<MapDesign>,
    /// Cluster label of each corpus point, aligned with the leading corpus entries of `points`.
    pub clusters: Vec<usize>,
}

async fn map(
    State(state): State<AppState>,
    Query(query): Query<MapQuery>,
) -> Result<Json<MapResponse>, ServiceError> {
    let atlas = &state.engine.atlas;
    let mut points: Vec<MapDesign> = Vec::new();
    let mut clusters = Vec::new();
    for &i in atlas.representatives() {
        points.push(MapDesign {
            shape_id: atlas.shapes()[i].id.clone(),
            position: atlas.positions()[i],
            color_class: ColorClass::Corpus,
        });
        clusters.push(atlas.cluster_labels()[i]);
    }
    if let Some(id) = &query.session {
        let lock = state.session(id).await?;
        let session = lock.read().await;
        points.extend(session.dynamic_shapes().iter().map(|d| MapDesign {
            shape_id: d.shape.id.clone(),
            position: d.position,
            color_class: d.color_class(),
        }));
    }
    Ok(Json(MapResponse { points, clusters }))
}

#[derive(Deserialize)]
struct ShapeQuery {
    session: Option<String>,
    resolution: Option<usize>,
}

async fn blobs(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ShapeQuery>,
) -> Result<Json<Shape>, ServiceError> {
    let shape = state
        .find_shape(&ShapeId::new(id), query.session.as_deref())
        .await?;
    Ok(Json(shape))
}

async fn mesh(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ShapeQuery>,
) -> Result<impl IntoResponse, ServiceError> {
    let resolution = query.resolution.unwrap_or(state.mesh.resolution);
    if !(8..=state.mesh.max_resolution).contains(&resolution) {
        return Err(ServiceError::BadRequest(format!(
            "resolution must be between 8 and {}",
            state.mesh.max_resolution
        )));
    }
    let shape = state
        .find_shape(&ShapeId::new(id), query.session.as_deref())
        .await?;
    let iso = state.mesh.iso_level;
    let bytes = tokio::task::spawn_blocking(move || {
        let mesh = extract_mesh(&shape, resolution, iso)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        export_obj(&mesh).map_err(|e| ServiceError::Internal(e.to_string()))
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "model/obj")], bytes))
}
