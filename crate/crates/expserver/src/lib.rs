//! Listening-experiment server: session lifecycle, stimulus delivery,
//! judgment and verbalization capture, and results export.
//!
//! Sessions are event-sourced (see [`session`]); the in-memory state is
//! rebuilt from the logs in `<output_dir>/sessions` on startup.

pub mod client;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use concealer_core::bws::design::{design_participant, DesignConfig, DesignError, Registry};
use concealer_core::gengrid::{GridError, Manifest};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use session::{Event, Session, SessionError, Stage};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Test clock that only moves when told to.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session {0}")]
    UnknownSession(u32),
    #[error("session {0} is finished")]
    Finished(u32),
    #[error("stale trial index {got}, expected {expected}")]
    Stale { got: usize, expected: usize },
    #[error("{0}")]
    OutOfStep(String),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown audio resource '{0}'")]
    UnknownAudio(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownSession(_) | ApiError::UnknownAudio(_) => StatusCode::NOT_FOUND,
            ApiError::Finished(_) => StatusCode::GONE,
            ApiError::Stale { .. } | ApiError::OutOfStep(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Design(DesignError::Saturated(_)) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Design(_) | ApiError::Session(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest has no usable stimuli")]
    EmptyManifest,
}

/// What is being served: the stimulus ids and where their audio lives.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub stimuli: Vec<String>,
    /// Positive sounds for verbalization, in manifest order.
    pub positives: Vec<String>,
    pub audio: HashMap<String, PathBuf>,
}

impl Experiment {
    /// Uses the ok rows of a manifest. Stimulus files are resolved against
    /// `stimulus_dir`; positive sounds, if `positive_dir` is given, are
    /// `<positive_dir>/<positive_id>.wav`.
    pub fn from_manifest(manifest: &Manifest, stimulus_dir: &Path, positive_dir: Option<&Path>) -> Self {
        let mut stimuli = Vec::new();
        let mut positives: Vec<String> = Vec::new();
        let mut audio = HashMap::new();
        for row in manifest.ok_rows() {
            stimuli.push(row.id.clone());
            audio.insert(row.id.clone(), stimulus_dir.join(&row.file));
            if !positives.contains(&row.positive_id) {
                positives.push(row.positive_id.clone());
            }
        }
        if let Some(dir) = positive_dir {
            for p in &positives {
                audio.entry(p.clone()).or_insert_with(|| dir.join(format!("{p}.wav")));
            }
        }
        Self {
            stimuli,
            positives,
            audio,
        }
    }

    pub fn load(manifest_path: &Path, positive_dir: Option<&Path>) -> Result<Self, ServerError> {
        let manifest = Manifest::read(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let exp = Self::from_manifest(&manifest, dir, positive_dir);
        if exp.stimuli.is_empty() {
            return Err(ServerError::EmptyManifest);
        }
        Ok(exp)
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub output_dir: PathBuf,
    pub design: DesignConfig,
    pub seed: u64,
}

impl ServerConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            output_dir: output_dir.into(),
            design: DesignConfig::default(),
            seed: 0,
        }
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.output_dir.join("sessions")
    }
}

pub fn session_seed(base: u64, participant_id: u32) -> u64 {
    base ^ (participant_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub id: String,
    pub url: String,
}

impl AudioRef {
    fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            url: format!("/audio/{id}"),
        }
    }
}

/// What the client should show next. Trial payloads never carry the phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Trial {
        trial_index: usize,
        trial_count: usize,
        stimuli: Vec<AudioRef>,
    },
    Verbalization {
        index: usize,
        count: usize,
        positive: AudioRef,
    },
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub participant_id: u32,
    pub next: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub trial_index: usize,
    pub best_id: String,
    pub worst_id: String,
    #[serde(default)]
    pub rt_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentAck {
    pub trial_index: usize,
    pub next: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizationRequest {
    pub positive_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizationAck {
    pub positive_id: String,
    pub next: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishAck {
    pub participant_id: u32,
    pub results_path: PathBuf,
    pub duration_s: u64,
}

struct Allocator {
    registry: Registry,
    next_id: u32,
}

pub struct AppState {
    experiment: Experiment,
    config: ServerConfig,
    clock: Arc<dyn Clock>,
    allocator: Mutex<Allocator>,
    sessions: RwLock<BTreeMap<u32, Arc<Mutex<Session>>>>,
}

fn payload(session: &Session) -> Payload {
    match session.stage() {
        Stage::Trial(i) => Payload::Trial {
            trial_index: i,
            trial_count: session.trials.len(),
            stimuli: session.trials[i - 1].tuple.ids().iter().map(|id| AudioRef::new(id)).collect(),
        },
        Stage::Verbalization(k) => Payload::Verbalization {
            index: k + 1,
            count: session.verbalization_order.len(),
            positive: AudioRef::new(&session.verbalization_order[k]),
        },
        Stage::Complete | Stage::Finished => Payload::Complete,
    }
}

impl AppState {
    /// Opens the output directory and replays every existing session log.
    pub fn open(experiment: Experiment, config: ServerConfig, clock: Arc<dyn Clock>) -> Result<Arc<Self>, ServerError> {
        let dir = config.sessions_dir();
        fs::create_dir_all(&dir).map_err(|source| ServerError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut registry = Registry::new();
        let mut sessions = BTreeMap::new();
        let entries = fs::read_dir(&dir).map_err(|source| ServerError::Io {
            path: dir.clone(),
            source,
        })?;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let session = session::replay(&path)?;
            registry.register(&session.design);
            if session.finished_at_ms.is_some() {
                let out = session::results_path(&config.output_dir, session.participant_id);
                let bytes = session.results_csv();
                if fs::read(&out).ok().as_deref() != Some(&bytes[..]) {
                    session::write_results_file(&out, &bytes)?;
                }
            }
            sessions.insert(session.participant_id, Arc::new(Mutex::new(session)));
        }
        let next_id = sessions.keys().next_back().map_or(1, |k| k + 1);
        Ok(Arc::new(Self {
            experiment,
            config,
            clock,
            allocator: Mutex::new(Allocator { registry, next_id }),
            sessions: RwLock::new(sessions),
        }))
    }

    pub fn experiment(&self) -> &Experiment {
        &self.experiment
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn session_ids(&self) -> Vec<u32> {
        self.sessions.read().unwrap().keys().copied().collect()
    }

    pub fn log_path(&self, participant_id: u32) -> PathBuf {
        session::log_path(&self.config.sessions_dir(), participant_id)
    }

    fn session(&self, id: u32) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(ApiError::UnknownSession(id))
    }

    /// Writes `event` to the log, then applies it in memory.
    fn commit(&self, session: &mut Session, event: Event) -> Result<(), ApiError> {
        session::append_event(&self.log_path(session.participant_id), &event, false)?;
        session.apply(&event)?;
        Ok(())
    }

    pub fn create_session(&self) -> Result<Created, ApiError> {
        let mut alloc = self.allocator.lock().unwrap();
        let pid = alloc.next_id;
        let seed = session_seed(self.config.seed, pid);
        let design = design_participant(&self.experiment.stimuli, pid, seed, &mut alloc.registry, &self.config.design)?;
        let mut order = self.experiment.positives.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.rotate_left(17)));
        let event = Event::Created {
            participant_id: pid,
            at_ms: self.clock.now_ms(),
            design,
            verbalization_order: order,
        };
        session::append_event(&self.log_path(pid), &event, true)?;
        let session = Session::from_created(&event)?;
        let next = payload(&session);
        self.sessions.write().unwrap().insert(pid, Arc::new(Mutex::new(session)));
        alloc.next_id += 1;
        Ok(Created {
            participant_id: pid,
            next,
        })
    }

    pub fn trial(&self, id: u32) -> Result<Payload, ApiError> {
        let handle = self.session(id)?;
        let s = handle.lock().unwrap();
        if s.stage() == Stage::Finished {
            return Err(ApiError::Finished(id));
        }
        Ok(payload(&s))
    }

    pub fn judge(&self, id: u32, req: &JudgmentRequest) -> Result<JudgmentAck, ApiError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().unwrap();
        let expected = match s.stage() {
            Stage::Finished => return Err(ApiError::Finished(id)),
            Stage::Trial(i) => i,
            _ => s.trials.len() + 1,
        };
        if req.trial_index != expected {
            let repeat = s.verbalizations.is_empty()
                && s.judged.last().is_some_and(|j| {
                    j.trial_index == req.trial_index
                        && j.best_id == req.best_id
                        && j.worst_id == req.worst_id
                        && j.rt_ms == req.rt_ms
                });
            if repeat {
                return Ok(JudgmentAck {
                    trial_index: req.trial_index,
                    next: payload(&s),
                });
            }
            return Err(ApiError::Stale {
                got: req.trial_index,
                expected,
            });
        }
        let tuple = &s.trials[expected - 1].tuple;
        if req.best_id == req.worst_id {
            return Err(ApiError::Invalid("best and worst must differ".into()));
        }
        for chosen in [&req.best_id, &req.worst_id] {
            if !tuple.contains(chosen) {
                return Err(ApiError::Invalid(format!("'{chosen}' is not in trial {expected}")));
            }
        }
        let event = Event::Judged {
            trial_index: expected,
            best_id: req.best_id.clone(),
            worst_id: req.worst_id.clone(),
            rt_ms: req.rt_ms,
            at_ms: self.clock.now_ms(),
        };
        self.commit(&mut s, event)?;
        Ok(JudgmentAck {
            trial_index: expected,
            next: payload(&s),
        })
    }

    pub fn verbalize(&self, id: u32, req: &VerbalizationRequest) -> Result<VerbalizationAck, ApiError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().unwrap();
        let ack = |s: &Session| VerbalizationAck {
            positive_id: req.positive_id.clone(),
            next: payload(s),
        };
        match s.stage() {
            Stage::Finished => Err(ApiError::Finished(id)),
            Stage::Trial(i) => Err(ApiError::OutOfStep(format!("trial {i} is still pending"))),
            stage => {
                if s.verbalizations.last().is_some_and(|(p, t)| *p == req.positive_id && *t == req.text) {
                    return Ok(ack(&s));
                }
                let Stage::Verbalization(k) = stage else {
                    return Err(ApiError::OutOfStep("all verbalizations are done".into()));
                };
                let expected = &s.verbalization_order[k];
                if *expected != req.positive_id {
                    return Err(if s.verbalization_order.contains(&req.positive_id) {
                        ApiError::OutOfStep(format!("expected a description of '{expected}'"))
                    } else {
                        ApiError::Invalid(format!("'{}' is not a positive sound", req.positive_id))
                    });
                }
                let event = Event::Verbalized {
                    positive_id: req.positive_id.clone(),
                    text: req.text.clone(),
                    at_ms: self.clock.now_ms(),
                };
                self.commit(&mut s, event)?;
                Ok(ack(&s))
            }
        }
    }

    pub fn finish(&self, id: u32) -> Result<FinishAck, ApiError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().unwrap();
        match s.stage() {
            Stage::Trial(i) => return Err(ApiError::OutOfStep(format!("cannot finish: trial {i} is pending"))),
            Stage::Verbalization(k) => {
                return Err(ApiError::OutOfStep(format!(
                    "cannot finish: {} of {} verbalizations given",
                    k,
                    s.verbalization_order.len()
                )))
            }
            Stage::Complete => self.commit(&mut s, Event::Finished { at_ms: self.clock.now_ms() })?,
            Stage::Finished => {}
        }
        let path = session::results_path(&self.config.output_dir, id);
        let bytes = s.results_csv();
        if fs::read(&path).ok().as_deref() != Some(&bytes[..]) {
            session::write_results_file(&path, &bytes)?;
        }
        Ok(FinishAck {
            participant_id: id,
            results_path: path,
            duration_s: s.duration_s().unwrap_or(0),
        })
    }

    pub fn audio_path(&self, id: &str) -> Result<&Path, ApiError> {
        self.experiment
            .audio
            .get(id)
            .map(PathBuf::as_path)
            .ok_or_else(|| ApiError::UnknownAudio(id.to_string()))
    }
}

async fn create_handler(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<Created>), ApiError> {
    Ok((StatusCode::CREATED, Json(state.create_session()?)))
}

async fn trial_handler(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u32>) -> Result<Json<Payload>, ApiError> {
    Ok(Json(state.trial(id)?))
}

async fn judgment_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u32>,
    Json(req): Json<JudgmentRequest>,
) -> Result<Json<JudgmentAck>, ApiError> {
    Ok(Json(state.judge(id, &req)?))
}

async fn verbalization_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u32>,
    Json(req): Json<VerbalizationRequest>,
) -> Result<Json<VerbalizationAck>, ApiError> {
    Ok(Json(state.verbalize(id, &req)?))
}

async fn finish_handler(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u32>) -> Result<Json<FinishAck>, ApiError> {
    Ok(Json(state.finish(id)?))
}

async fn audio_handler(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let path = state.audio_path(&id)?;
    let bytes = tokio::fs::read(path).await.map_err(|_| ApiError::UnknownAudio(id))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_handler))
        .route("/session/{id}/trial", get(trial_handler))
        .route("/session/{id}/judgment", post(judgment_handler))
        .route("/session/{id}/verbalization", post(verbalization_handler))
        .route("/session/{id}/finish", post(finish_handler))
        .route("/audio/{stimulus_id}", get(audio_handler))
        .with_state(state)
}
