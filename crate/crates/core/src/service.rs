//! HTTP annotation service.
//!
//! Annotations live in an append-only JSON Lines file. Every accepted record
//! is written as one line and fsynced before the client sees `201`. All
//! mutations go through one writer lock, which is also where
//! (utterance, annotator) uniqueness is enforced; readers take a shared lock
//! on the in-memory index.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::labels::{self, AnnotationRecord, UtteranceMeta, DEFAULT_QUORUM, HUE_BIN_DEG, HUE_BINS, SV_GRID};

/// Tolerance when matching a submitted color to a tile.
pub const OPTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    pub audio_root: PathBuf,
    pub store: PathBuf,
    pub quorum: usize,
    pub bind: SocketAddr,
    pub seed: u64,
    /// Directory holding the built annotation UI, served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            manifest: "manifest.csv".into(),
            audio_root: ".".into(),
            store: "annotations.jsonl".into(),
            quorum: DEFAULT_QUORUM,
            bind: ([127, 0, 0, 1], 8080).into(),
            seed: 0,
            ui_dir: None,
        }
    }
}

// ---------------------------------------------------------------------------
// option grid

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvOption {
    pub saturation: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub utterance_id: String,
    pub audio_url: String,
    pub hue_options: Vec<f64>,
    pub sv_grid: Vec<SvOption>,
    /// The black tile: value 0, saturation irrelevant (stored as 0).
    pub extra_option: SvOption,
}

impl TaskAssignment {
    pub fn for_utterance(utterance_id: &str) -> Self {
        TaskAssignment {
            utterance_id: utterance_id.to_string(),
            audio_url: format!("/api/audio/{utterance_id}"),
            hue_options: labels::hue_options(),
            sv_grid: SV_GRID
                .iter()
                .map(|&(saturation, value)| SvOption { saturation, value })
                .collect(),
            extra_option: SvOption {
                saturation: 0.0,
                value: 0.0,
            },
        }
    }
}

/// Snaps a submitted color onto the tile set, or explains why it is off-grid.
/// Value-0 submissions are stored with saturation 0.
pub fn canonical_option(hue_deg: f64, saturation: f64, value: f64) -> std::result::Result<(f64, f64, f64), String> {
    if !(hue_deg.is_finite() && saturation.is_finite() && value.is_finite()) {
        return Err("non-finite color component".into());
    }
    let k = (hue_deg / HUE_BIN_DEG).round();
    if !(0.0..HUE_BINS as f64).contains(&k) || (hue_deg - k * HUE_BIN_DEG).abs() > OPTION_TOLERANCE {
        return Err(format!("hue {hue_deg} is not one of the {HUE_BINS} tiles"));
    }
    let hue = k * HUE_BIN_DEG;
    if value.abs() <= OPTION_TOLERANCE {
        return Ok((hue, 0.0, 0.0));
    }
    SV_GRID
        .iter()
        .find(|(s, v)| (s - saturation).abs() <= OPTION_TOLERANCE && (v - value).abs() <= OPTION_TOLERANCE)
        .map(|&(s, v)| (hue, s, v))
        .ok_or_else(|| format!("(saturation {saturation}, value {value}) is not on the grid"))
}

// ---------------------------------------------------------------------------
// store

#[derive(Debug, Clone, Default)]
struct Index {
    records: Vec<AnnotationRecord>,
    pairs: HashSet<(String, String)>,
    counts: BTreeMap<String, usize>,
    by_annotator: BTreeMap<String, BTreeSet<String>>,
}

impl Index {
    fn insert(&mut self, r: AnnotationRecord) {
        self.pairs.insert((r.utterance_id.clone(), r.annotator_id.clone()));
        *self.counts.entry(r.utterance_id.clone()).or_default() += 1;
        self.by_annotator
            .entry(r.annotator_id.clone())
            .or_default()
            .insert(r.utterance_id.clone());
        self.records.push(r);
    }

    fn contains(&self, utterance_id: &str, annotator_id: &str) -> bool {
        self.pairs.contains(&(utterance_id.to_string(), annotator_id.to_string()))
    }
}

/// Why a submission was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    AlreadyAnnotated,
    InvalidOption(String),
    UnknownUtterance(String),
    Invalid(String),
}

impl Rejection {
    pub fn status(&self) -> StatusCode {
        match self {
            Rejection::AlreadyAnnotated => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Rejection::AlreadyAnnotated => "already annotated".into(),
            Rejection::InvalidOption(m) => format!("invalid option: {m}"),
            Rejection::UnknownUtterance(id) => format!("unknown utterance {id:?}"),
            Rejection::Invalid(m) => m.clone(),
        }
    }
}

/// Durable annotation store over a JSON Lines file.
pub struct AnnotationStore {
    path: PathBuf,
    writer: Mutex<File>,
    index: RwLock<Index>,
}

impl AnnotationStore {
    /// Opens (creating if needed) the store and rebuilds the index. A
    /// trailing partial line left by an interrupted write is cut off.
    pub fn open(path: &Path) -> Result<Self> {
        let mut index = Index::default();
        if path.exists() {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let complete = match bytes.iter().rposition(|b| *b == b'\n') {
                Some(p) => p + 1,
                None => 0,
            };
            if complete < bytes.len() {
                tracing::warn!(path = %path.display(), dropped = bytes.len() - complete, "discarding partial trailing record");
                let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
                f.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
                f.sync_all().map_err(|e| Error::io(path, e))?;
            }
            let text = std::str::from_utf8(&bytes[..complete])
                .map_err(|e| Error::validation(format!("{}: not UTF-8: {e}", path.display())))?;
            for r in labels::parse_annotations(text)? {
                index.insert(r);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(AnnotationStore {
            path: path.to_path_buf(),
            writer: Mutex::new(file),
            index: RwLock::new(index),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `record` unless its (utterance, annotator) pair is present.
    /// The caller validates everything else.
    pub fn append(&self, record: AnnotationRecord) -> std::result::Result<AnnotationRecord, AppendError> {
        let mut file = self.writer.lock().expect("writer lock poisoned");
        if self
            .index
            .read()
            .expect("index lock poisoned")
            .contains(&record.utterance_id, &record.annotator_id)
        {
            return Err(AppendError::Duplicate);
        }
        let mut line = labels::annotation_line(&record);
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|e| AppendError::Io(Error::io(&self.path, e)))?;
        self.index.write().expect("index lock poisoned").insert(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.index.read().expect("index lock poisoned").records.clone()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// JSON Lines export in the annotation file format.
    pub fn export(&self) -> String {
        let idx = self.index.read().expect("index lock poisoned");
        let mut out = String::new();
        for r in &idx.records {
            out.push_str(&labels::annotation_line(r));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug)]
pub enum AppendError {
    Duplicate,
    Io(Error),
}

/// Picks uniformly among the eligible utterances with the fewest annotations.
/// Eligible: in `utterances`, not yet labeled by the annotator, below quorum.
pub fn choose_task<R: Rng>(
    utterances: &[String],
    counts: &BTreeMap<String, usize>,
    seen: Option<&BTreeSet<String>>,
    quorum: usize,
    rng: &mut R,
) -> Option<String> {
    let count = |id: &String| counts.get(id).copied().unwrap_or(0);
    let eligible: Vec<&String> = utterances
        .iter()
        .filter(|id| count(id) < quorum && !seen.is_some_and(|s| s.contains(*id)))
        .collect();
    let min = eligible.iter().map(|id| count(id)).min()?;
    let candidates: Vec<&String> = eligible.into_iter().filter(|id| count(id) == min).collect();
    Some(candidates[rng.random_range(0..candidates.len())].clone())
}

// ---------------------------------------------------------------------------
// application

pub struct AppState {
    pub config: ServiceConfig,
    pub utterances: BTreeMap<String, UtteranceMeta>,
    pub store: AnnotationStore,
    rng: Mutex<ChaCha8Rng>,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let text = fs::read_to_string(&config.manifest).map_err(|e| Error::io(&config.manifest, e))?;
        let metas = labels::parse_manifest(&text)?;
        Self::with_manifest(config, metas)
    }

    pub fn with_manifest(config: ServiceConfig, metas: Vec<UtteranceMeta>) -> Result<Self> {
        if config.quorum == 0 {
            return Err(Error::validation("quorum must be >= 1"));
        }
        let store = AnnotationStore::open(&config.store)?;
        let utterances: BTreeMap<String, UtteranceMeta> =
            metas.into_iter().map(|m| (m.utterance_id.clone(), m)).collect();
        for r in store.records() {
            if !utterances.contains_key(&r.utterance_id) {
                tracing::warn!(utterance = %r.utterance_id, "stored annotation for an utterance missing from the manifest");
            }
        }
        Ok(AppState {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            utterances,
            store,
        })
    }

    pub fn next_task(&self, annotator_id: &str) -> Option<TaskAssignment> {
        let ids: Vec<String> = self.utterances.keys().cloned().collect();
        let idx = self.store.index.read().expect("index lock poisoned");
        let mut rng = self.rng.lock().expect("rng lock poisoned");
        choose_task(
            &ids,
            &idx.counts,
            idx.by_annotator.get(annotator_id),
            self.config.quorum,
            &mut *rng,
        )
        .map(|id| TaskAssignment::for_utterance(&id))
    }

    /// Validates, canonicalizes and durably stores one submission.
    pub fn submit(&self, req: SubmitRequest) -> std::result::Result<AnnotationRecord, SubmitError> {
        if req.utterance_id.is_empty() || req.annotator_id.is_empty() {
            return Err(SubmitError::Rejected(Rejection::Invalid(
                "utterance_id and annotator_id must be non-empty".into(),
            )));
        }
        if !self.utterances.contains_key(&req.utterance_id) {
            return Err(SubmitError::Rejected(Rejection::UnknownUtterance(req.utterance_id)));
        }
        let (hue_deg, saturation, value) = canonical_option(req.hue_deg, req.saturation, req.value)
            .map_err(|m| SubmitError::Rejected(Rejection::InvalidOption(m)))?;
        let record = AnnotationRecord {
            utterance_id: req.utterance_id,
            annotator_id: req.annotator_id,
            hue_deg,
            saturation,
            value,
            submitted_at: req.submitted_at.unwrap_or_else(Utc::now),
        };
        match self.store.append(record) {
            Ok(r) => Ok(r),
            Err(AppendError::Duplicate) => Err(SubmitError::Rejected(Rejection::AlreadyAnnotated)),
            Err(AppendError::Io(e)) => Err(SubmitError::Storage(e)),
        }
    }

    pub fn progress(&self) -> Progress {
        let idx = self.store.index.read().expect("index lock poisoned");
        Progress {
            total_utterances: self.utterances.len(),
            fully_annotated: self
                .utterances
                .keys()
                .filter(|id| idx.counts.get(*id).copied().unwrap_or(0) >= self.config.quorum)
                .count(),
            total_annotations: idx.records.len(),
            quorum: self.config.quorum,
            per_annotator: idx.by_annotator.iter().map(|(a, s)| (a.clone(), s.len())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub utterance_id: String,
    pub annotator_id: String,
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
    #[serde(default)]
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Debug)]
pub enum SubmitError {
    Rejected(Rejection),
    Storage(Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total_utterances: usize,
    pub fully_annotated: usize,
    pub total_annotations: usize,
    pub quorum: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(ErrorBody { error: message })).into_response()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator_id: Option<String>,
}

async fn next_task_handler(State(app): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Response {
    let Some(annotator) = q.annotator_id.filter(|a| !a.is_empty()) else {
        return error_response(StatusCode::BAD_REQUEST, "annotator_id is required".into());
    };
    match app.next_task(&annotator) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("wav") => "audio/wav",
        Some("mp3") => "audio/mpeg",
        Some("flac") => "audio/flac",
        Some("ogg") => "audio/ogg",
        _ => "application/octet-stream",
    }
}

async fn audio_handler(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(meta) = app.utterances.get(&id) else {
        return error_response(StatusCode::NOT_FOUND, format!("unknown utterance {id:?}"));
    };
    let path = app.config.audio_root.join(&meta.audio_path);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "audio file unavailable");
            error_response(StatusCode::NOT_FOUND, format!("audio for {id:?} not available"))
        }
    }
}

async fn submit_handler(State(app): State<Arc<AppState>>, Json(req): Json<SubmitRequest>) -> Response {
    // the append fsyncs; keep it off the async worker threads
    let result = tokio::task::spawn_blocking(move || app.submit(req)).await;
    match result {
        Ok(Ok(record)) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(SubmitError::Rejected(r))) => error_response(r.status(), r.message()),
        Ok(Err(SubmitError::Storage(e))) => {
            tracing::error!(error = %e, "failed to persist annotation");
            error_response(StatusCode::INTERNAL_SERVER_ERROR, "storage failure".into())
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    }
}

async fn export_handler(State(app): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], app.store.export()).into_response()
}

async fn progress_handler(State(app): State<Arc<AppState>>) -> Json<Progress> {
    Json(app.progress())
}

#[derive(Deserialize)]
struct PaletteQuery {
    hue: Option<f64>,
}

/// HSV → hex conformance fixture for the UI's tile colors.
async fn palette_handler(Query(q): Query<PaletteQuery>) -> Response {
    match labels::tile_fixture_csv(q.hue.unwrap_or(0.0)) {
        Ok(csv) => ([(header::CONTENT_TYPE, "text/csv")], csv).into_response(),
        Err(e) => error_response(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    let ui_dir = app.config.ui_dir.clone();
    let api = Router::new()
        .route("/api/tasks/next", get(next_task_handler))
        .route("/api/audio/{utterance_id}", get(audio_handler))
        .route("/api/annotations", post(submit_handler))
        .route("/api/export", get(export_handler))
        .route("/api/progress", get(progress_handler))
        .route("/api/palette", get(palette_handler))
        .with_state(app);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let bind = config.bind;
    let app = Arc::new(AppState::open(config)?);
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::io(bind.to_string(), e))?;
    tracing::info!(address = %bind, utterances = app.utterances.len(), stored = app.store.len(), "annotation service listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(bind.to_string(), e))
}
