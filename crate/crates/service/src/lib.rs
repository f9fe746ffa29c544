//! HTTP facade over annotation sessions.
//!
//! ```text
//! POST /sessions                  {corpus, config?, model?, restore?} -> 201 {id, classes}
//! GET  /sessions/{id}/next        -> 200 suggestion | 204 when the pool is exhausted
//! POST /sessions/{id}/feedback    {example_id, label} -> {total, correct, mca}
//! GET  /sessions/{id}/metrics     -> {total, correct, mca, lambda_histogram, ...}
//! POST /sessions/{id}/checkpoint  -> {path}
//! ```
//!
//! Each session sits behind its own async mutex, so requests to one session
//! are applied in arrival order while distinct sessions run in parallel.

mod api;
mod error;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::SystemTime;

use araida_core::harness::{substream, ExampleStream};
use araida_core::session::Checkpoint;
use araida_core::{Corpus, ExternalModel, Session, Suggestion};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

pub use api::*;
pub use error::ApiError;

/// Stream id for example ordering; matches the experiment harness.
const ORDER_STREAM: u64 = 2;

/// A corpus the server can start sessions on.
#[derive(Debug)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    index: HashMap<String, usize>,
}

impl LoadedCorpus {
    pub fn new(corpus: Corpus) -> Self {
        let index = corpus.index_by_id().into_iter().map(|(id, i)| (id.to_string(), i)).collect();
        Self { corpus, index }
    }
}

#[derive(Debug)]
pub struct AppState {
    corpora: HashMap<String, Arc<LoadedCorpus>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
    checkpoint_dir: PathBuf,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpora: HashMap::new(),
            sessions: RwLock::new(HashMap::new()),
            checkpoint_dir: checkpoint_dir.into(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_corpus(mut self, name: impl Into<String>, corpus: Corpus) -> Self {
        self.corpora.insert(name.into(), Arc::new(LoadedCorpus::new(corpus)));
        self
    }

    pub fn corpus_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.corpora.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }
}

struct LiveSession {
    session: Session,
    corpus_name: String,
    corpus: Arc<LoadedCorpus>,
    stream: ExampleStream,
    /// Corpus index and suggestion currently shown to the annotator.
    pending: Option<(usize, Suggestion)>,
    mca_series: Vec<f64>,
    created: SystemTime,
}

impl std::fmt::Debug for LiveSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveSession").field("corpus", &self.corpus_name).field("counters", &self.session.counters()).finish()
    }
}

/// On-disk form of a live session: the core checkpoint plus the ordering
/// cursor and the MCA series.
#[derive(Serialize, Deserialize)]
struct ServiceCheckpoint {
    session: Checkpoint,
    corpus: String,
    stream: ExampleStream,
    pending: Option<usize>,
    mca_series: Vec<f64>,
}

impl LiveSession {
    fn next(&mut self) -> Result<Option<SuggestionPayload>, ApiError> {
        if self.pending.is_none() {
            let examples = self.corpus.corpus.examples();
            let Some(index) = self.stream.peek(examples, self.session.model())? else {
                return Ok(None);
            };
            let suggestion = self.session.suggest(&examples[index])?;
            self.stream.next(examples, self.session.model())?;
            self.pending = Some((index, suggestion));
        }
        let (index, suggestion) = self.pending.as_ref().expect("pending suggestion");
        Ok(Some(self.payload(*index, suggestion)))
    }

    fn payload(&self, index: usize, s: &Suggestion) -> SuggestionPayload {
        let labels = self.session.labels();
        let name = |c: usize| labels.name(c).unwrap_or_default().to_string();
        let example = &self.corpus.corpus.examples()[index];
        SuggestionPayload {
            example_id: example.id.clone(),
            text: example.text.clone(),
            suggested_class: name(s.suggested_class),
            lambda: s.lambda,
            f_probs: s.f_pred.probs().map(<[f64]>::to_vec),
            g_probs: s.g_pred.clone(),
            neighbors: s
                .neighbors
                .iter()
                .map(|n| {
                    let source = n.origin.as_ref().and_then(|id| self.corpus.index.get(id));
                    NeighborPayload {
                        example_id: n.origin.clone(),
                        text: source.and_then(|&i| self.corpus.corpus.examples()[i].text.clone()),
                        label: name(n.label),
                        distance: n.distance,
                    }
                })
                .collect(),
            remaining: self.stream.remaining(),
        }
    }

    fn feedback(&mut self, req: &FeedbackRequest) -> Result<FeedbackResponse, ApiError> {
        match &self.pending {
            Some((_, s)) if s.id == req.example_id => {}
            Some((_, s)) => {
                return Err(ApiError::conflict(format!(
                    "example {:?} is not pending (pending: {:?})",
                    req.example_id, s.id
                )))
            }
            None => return Err(ApiError::conflict(format!("example {:?} is not pending", req.example_id))),
        }
        let label = self
            .session
            .labels()
            .index_of(&req.label)
            .ok_or_else(|| ApiError::bad_request(format!("unknown label {:?}", req.label)))?;
        self.session.feedback(&req.example_id, label)?;
        self.pending = None;
        let mca = self.session.mca()?;
        self.mca_series.push(mca);
        let c = self.session.counters();
        Ok(FeedbackResponse { total: c.total, correct: c.correct, mca })
    }

    fn metrics(&self) -> MetricsResponse {
        let c = self.session.counters();
        MetricsResponse {
            total: c.total,
            correct: c.correct,
            mca: self.session.mca().ok(),
            lambda_histogram: self.session.lambda_histogram().to_vec(),
            datastore_size: self.session.datastore().len(),
            capacity: self.session.datastore().capacity(),
            round: self.session.round(),
            remaining: self.stream.remaining() + usize::from(self.pending.is_some()),
            mca_series: self.mca_series.clone(),
            created_at: self.created.duration_since(SystemTime::UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn checkpoint(&self, path: &Path) -> Result<(), ApiError> {
        let cp = ServiceCheckpoint {
            session: self.session.checkpoint(Some(self.corpus_name.clone()))?,
            corpus: self.corpus_name.clone(),
            stream: self.stream.clone(),
            pending: self.pending.as_ref().map(|p| p.0),
            mca_series: self.mca_series.clone(),
        };
        let json = serde_json::to_vec(&cp).map_err(|e| ApiError::internal(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| ApiError::internal(format!("writing {}: {e}", path.display())))
    }
}

fn build_session(state: &AppState, req: CreateSessionRequest) -> Result<LiveSession, ApiError> {
    if let Some(file) = &req.restore {
        return restore_session(state, &req.corpus, file);
    }
    let loaded = state
        .corpora
        .get(&req.corpus)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown corpus {:?}", req.corpus)))?;
    let corpus = &loaded.corpus;
    let dim = corpus.require_features()?;
    let labels = corpus.label_space().clone();
    let config = req.config.unwrap_or_default();
    let session = match req.model.unwrap_or_default() {
        ModelSpec::Linear => Session::with_linear_model(&config, labels, dim)?,
        ModelSpec::External(cfg) => {
            let model = ExternalModel::new(cfg, labels.clone())?;
            Session::new(&config, labels, dim, Box::new(model))?
        }
    };
    let cfg = session.config();
    let stream = ExampleStream::new(
        (0..corpus.len()).collect(),
        cfg.ordering,
        cfg.batch_size,
        &mut substream(cfg.seed, ORDER_STREAM),
    )?;
    Ok(LiveSession {
        session,
        corpus_name: req.corpus,
        corpus: loaded,
        stream,
        pending: None,
        mca_series: Vec::new(),
        created: SystemTime::now(),
    })
}

fn restore_session(state: &AppState, corpus: &str, file: &str) -> Result<LiveSession, ApiError> {
    if file.contains(['/', '\\']) || file.starts_with('.') {
        return Err(ApiError::bad_request("restore takes a file name inside the checkpoint directory"));
    }
    let path = state.checkpoint_dir.join(file);
    let bytes = std::fs::read(&path).map_err(|e| ApiError::not_found(format!("checkpoint {file:?}: {e}")))?;
    let cp: ServiceCheckpoint =
        serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("checkpoint {file:?}: {e}")))?;
    if cp.corpus != corpus {
        return Err(ApiError::bad_request(format!("checkpoint is for corpus {:?}, not {corpus:?}", cp.corpus)));
    }
    let loaded = state
        .corpora
        .get(corpus)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown corpus {corpus:?}")))?;
    let mut stream = cp.stream;
    if let Some(i) = cp.pending {
        stream.requeue(i);
    }
    Ok(LiveSession {
        session: Session::restore(cp.session)?,
        corpus_name: cp.corpus,
        corpus: loaded,
        stream,
        pending: None,
        mca_series: cp.mca_series,
        created: SystemTime::now(),
    })
}

/// Runs `f` on the session off the async executor: suggestions may train
/// models or call an external annotator.
async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut LiveSession) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let mut guard = state.session(id)?.lock_owned().await;
    tokio::task::spawn_blocking(move || f(&mut guard)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

/// JSON body parsing with 400 (not 422) for bodies that do not fit the schema.
fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let st = state.clone();
    let live = tokio::task::spawn_blocking(move || build_session(&st, req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let classes = live.session.labels().names().to_vec();
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    tracing::info!(session = %id, corpus = %live.corpus_name, "session created");
    state.sessions.write().expect("session table poisoned").insert(id.clone(), Arc::new(Mutex::new(live)));
    Ok((StatusCode::CREATED, Json(CreateSessionResponse { id, classes })))
}

async fn next_suggestion(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(match with_session(&state, &id, LiveSession::next).await? {
        Some(payload) => Json(payload).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<FeedbackResponse>, ApiError> {
    let req: FeedbackRequest = parse_body(&body)?;
    with_session(&state, &id, move |s| s.feedback(&req)).await.map(Json)
}

async fn get_metrics(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<MetricsResponse>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(guard.metrics()))
}

async fn post_checkpoint(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<CheckpointResponse>, ApiError> {
    let dir = state.checkpoint_dir.clone();
    let file = format!("{id}.json");
    let path = dir.join(&file);
    with_session(&state, &id, move |s| {
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("creating {}: {e}", dir.display())))?;
        s.checkpoint(&path)?;
        Ok(CheckpointResponse { file, path: path.display().to_string() })
    })
    .await
    .map(Json)
}

async fn list_corpora(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.corpus_names().into_iter().map(String::from).collect())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/corpora", get(list_corpora))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_suggestion))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/checkpoint", post(post_checkpoint))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the listener fails or the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, corpora = ?state.corpus_names(), "listening");
    axum::serve(listener, router(state)).await
}
