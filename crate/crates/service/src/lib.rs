//! HTTP service for live trial conduct. Every trial is an append-only
//! JSON-lines event log under the data directory; the in-memory session is
//! rebuilt from it on start-up.

pub mod error;
pub mod events;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use lse_dose::design::{CohortRecord, DesignKind, FinalReport, PosteriorView, Stage, StopReason, TrialConfig, TrialSession, TrialState};
use lse_dose::McmcConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

pub use error::ApiError;
pub use events::{append_event, read_events, replay_events, EventKind, TrialEvent};

/// Service settings, normally read from `PORT`, `DATA_DIR` and
/// `INFERENCE_BUDGET`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub budget: McmcConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: 8080, data_dir: PathBuf::from("data"), budget: McmcConfig::service() }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, String> {
        let mut c = Self::default();
        if let Ok(p) = std::env::var("PORT") {
            c.port = p.parse().map_err(|_| format!("PORT must be a port number, got '{p}'"))?;
        }
        if let Ok(d) = std::env::var("DATA_DIR") {
            c.data_dir = PathBuf::from(d);
        }
        if let Ok(b) = std::env::var("INFERENCE_BUDGET") {
            c.budget = parse_budget(&b)?;
        }
        Ok(c)
    }
}

/// `"iterations/burn_in"`, or `"iterations"` with a quarter used as burn-in.
pub fn parse_budget(s: &str) -> Result<McmcConfig, String> {
    let bad = || format!("INFERENCE_BUDGET must look like 4000/1000, got '{s}'");
    let (it, burn) = match s.split_once('/') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let it: usize = s.trim().parse().map_err(|_| bad())?;
            (it, it / 4)
        }
    };
    let c = McmcConfig { iterations: it, burn_in: burn, ..McmcConfig::service() };
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

/// Read-only view served without taking the writer lock.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSnapshot {
    pub id: String,
    pub design: DesignKind,
    pub config: TrialConfig,
    pub state: TrialState,
    pub events: Vec<TrialEvent>,
}

struct TrialEntry {
    session: TrialSession,
    events: Vec<TrialEvent>,
    log: PathBuf,
    posteriors: HashMap<usize, Arc<PosteriorView>>,
}

/// Latest cohort seq plus cached posterior views keyed by seq.
type PosteriorCache = (Option<usize>, HashMap<usize, Arc<PosteriorView>>);

struct TrialHandle {
    id: String,
    writer: Arc<Mutex<TrialEntry>>,
    snapshot: RwLock<Arc<TrialSnapshot>>,
    posteriors: RwLock<PosteriorCache>,
}

impl TrialHandle {
    fn publish(&self, entry: &TrialEntry) {
        let snap = TrialSnapshot {
            id: self.id.clone(),
            design: entry.session.kind(),
            config: entry.session.config().clone(),
            state: entry.session.state().clone(),
            events: entry.events.clone(),
        };
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snap);
        let latest = entry.session.posterior_view().map(|v| v.seq);
        *self.posteriors.write().expect("posterior lock") = (latest, entry.posteriors.clone());
    }

    fn snapshot(&self) -> Arc<TrialSnapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Registry>,
}

struct Registry {
    data_dir: PathBuf,
    budget: McmcConfig,
    trials: RwLock<HashMap<String, Arc<TrialHandle>>>,
}

fn new_handle(id: String, session: TrialSession, events: Vec<TrialEvent>, log: PathBuf) -> Arc<TrialHandle> {
    let mut posteriors = HashMap::new();
    if let Some(v) = session.posterior_view() {
        posteriors.insert(v.seq, Arc::new(v));
    }
    let entry = TrialEntry { session, events, log, posteriors };
    let placeholder = TrialSnapshot {
        id: id.clone(),
        design: entry.session.kind(),
        config: entry.session.config().clone(),
        state: entry.session.state().clone(),
        events: Vec::new(),
    };
    let handle = TrialHandle {
        id,
        snapshot: RwLock::new(Arc::new(placeholder)),
        posteriors: RwLock::new((None, HashMap::new())),
        writer: Arc::new(Mutex::new(entry)),
    };
    {
        let entry = handle.writer.try_lock().expect("fresh lock");
        handle.publish(&entry);
    }
    Arc::new(handle)
}

impl AppState {
    /// Open the data directory and replay every stored trial.
    pub fn open(data_dir: &Path, budget: McmcConfig) -> Result<Self, String> {
        std::fs::create_dir_all(data_dir).map_err(|e| format!("cannot create {}: {e}", data_dir.display()))?;
        let mut trials = HashMap::new();
        let listing = std::fs::read_dir(data_dir).map_err(|e| format!("cannot read {}: {e}", data_dir.display()))?;
        for entry in listing {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let events = read_events(&path).map_err(|e| e.to_string())?;
            let (id, session) = replay_events(&events, &budget).map_err(|e| format!("{}: {e}", path.display()))?;
            trials.insert(id.clone(), new_handle(id, session, events, path));
        }
        Ok(Self { inner: Arc::new(Registry { data_dir: data_dir.to_path_buf(), budget, trials: RwLock::new(trials) }) })
    }

    pub fn trial_count(&self) -> usize {
        self.inner.trials.read().expect("registry lock").len()
    }

    fn handle(&self, id: &str) -> Result<Arc<TrialHandle>, ApiError> {
        self.inner.trials.read().expect("registry lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create_trial))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/cohorts", post(submit_cohort))
        .route("/trials/{id}/finalize", post(finalize))
        .route("/trials/{id}/posterior", get(get_posterior))
        .with_state(state)
}

/// Bind and serve until ctrl-c. `on_bound` receives the actual address.
pub async fn serve(config: ServiceConfig, on_bound: impl FnOnce(std::net::SocketAddr)) -> Result<(), String> {
    let state = AppState::open(&config.data_dir, config.budget)?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await.map_err(|e| format!("bind: {e}"))?;
    on_bound(listener.local_addr().map_err(|e| e.to_string())?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct CreateQuery {
    design: Option<String>,
}

#[derive(Serialize)]
struct CreateResponse {
    id: String,
    next_dose: Option<usize>,
    #[serde(flatten)]
    snapshot: TrialSnapshot,
}

async fn create_trial(State(app): State<AppState>, Query(q): Query<CreateQuery>, body: Bytes) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let design: DesignKind = match q.design.as_deref() {
        None => DesignKind::Lse,
        Some(d) => d.parse().map_err(|e: lse_dose::Error| ApiError::bad_request(e.to_string()))?,
    };
    let config: TrialConfig = if body.iter().all(u8::is_ascii_whitespace) {
        TrialConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", "configuration could not be parsed").with_details(vec![e.to_string()])
        })?
    };
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", "configuration is invalid").with_details(violations));
    }
    let session = TrialSession::with_budget(design, config.clone(), app.inner.budget)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let log = app.inner.data_dir.join(format!("{id}.jsonl"));
    let event = TrialEvent::new(0, EventKind::Created, events::created_payload(&id, design, &config));
    append_event(&log, &event).map_err(|e| ApiError::internal(format!("event log: {e}")))?;
    let handle = new_handle(id.clone(), session, vec![event], log);
    let snapshot = (*handle.snapshot()).clone();
    app.inner.trials.write().expect("registry lock").insert(id.clone(), handle);
    Ok((StatusCode::CREATED, Json(CreateResponse { id, next_dose: snapshot.state.next_dose, snapshot })))
}

async fn get_trial(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Arc<TrialSnapshot>>, ApiError> {
    Ok(Json(app.handle(&id)?.snapshot()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CohortRequest {
    dose_level: usize,
    outcomes: Vec<u8>,
    #[serde(rename = "override", default)]
    allow_override: bool,
    /// Seq of the latest event the client has seen; a mismatch means another
    /// update got there first.
    expected_seq: Option<u64>,
}

#[derive(Serialize)]
struct CohortResponse {
    event_seq: u64,
    cohort: CohortRecord,
    stage: Stage,
    next_dose: Option<usize>,
    stop_reason: Option<StopReason>,
    p_n: Option<Vec<f64>>,
    acquisition: Option<Vec<f64>>,
    admissible: Option<Vec<usize>>,
    posterior: Option<Arc<PosteriorView>>,
    state: TrialState,
}

async fn submit_cohort(State(app): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<CohortResponse>, ApiError> {
    let handle = app.handle(&id)?;
    let req: CohortRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("cohort body: {e}")))?;
    if let Some(bad) = req.outcomes.iter().find(|&&o| o > 1) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_cohort", format!("outcomes must be 0 or 1, got {bad}")));
    }
    let mut entry = handle.writer.clone().try_lock_owned().map_err(|_| ApiError::busy())?;
    let last_seq = entry.events.last().map_or(0, |e| e.seq);
    if let Some(expected) = req.expected_seq {
        if expected != last_seq {
            return Err(ApiError::new(StatusCode::CONFLICT, "stale_seq", format!("expected_seq {expected} but the latest event is {last_seq}")));
        }
    }
    let h = handle.clone();
    tokio::task::spawn_blocking(move || {
        let outcomes: Vec<bool> = req.outcomes.iter().map(|&o| o == 1).collect();
        let record = entry.session.submit_cohort(req.dose_level, &outcomes, req.allow_override)?.clone();
        let mut new_events = vec![TrialEvent::new(
            last_seq + 1,
            EventKind::CohortSubmitted,
            json!({
                "dose_level": record.dose_level,
                "outcomes": req.outcomes,
                "override": record.overridden,
                "next_dose": record.decision.next_dose,
            }),
        )];
        if let Some(reason) = record.decision.stop_reason {
            new_events.push(TrialEvent::new(last_seq + 2, EventKind::Stopped, json!({ "reason": reason })));
        }
        for ev in &new_events {
            append_event(&entry.log, ev).map_err(|e| ApiError::internal(format!("event log: {e}")))?;
        }
        entry.events.extend(new_events);
        let posterior = entry.session.posterior_view().filter(|v| v.seq == record.seq).map(Arc::new);
        if let Some(p) = &posterior {
            entry.posteriors.insert(p.seq, p.clone());
        }
        h.publish(&entry);
        let state = entry.session.state().clone();
        Ok(CohortResponse {
            event_seq: last_seq + 1,
            stage: state.stage,
            next_dose: record.decision.next_dose,
            stop_reason: record.decision.stop_reason,
            p_n: record.decision.p_sub.clone(),
            acquisition: record.decision.acquisition.clone(),
            admissible: record.decision.admissible.clone(),
            cohort: record,
            posterior,
            state,
        })
    })
    .await
    .map_err(|e| ApiError::internal(format!("worker: {e}")))?
    .map(Json)
}

#[derive(Serialize)]
struct FinalizeResponse {
    id: String,
    report: FinalReport,
}

async fn finalize(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<FinalizeResponse>, ApiError> {
    let handle = app.handle(&id)?;
    let mut entry = handle.writer.clone().try_lock_owned().map_err(|_| ApiError::busy())?;
    let h = handle.clone();
    tokio::task::spawn_blocking(move || {
        let already = entry.session.state().final_report.is_some();
        let report = entry.session.finalize()?;
        if !already {
            let seq = entry.events.last().map_or(0, |e| e.seq) + 1;
            let ev = TrialEvent::new(seq, EventKind::Finalized, json!({ "report": report }));
            append_event(&entry.log, &ev).map_err(|e| ApiError::internal(format!("event log: {e}")))?;
            entry.events.push(ev);
            h.publish(&entry);
        }
        Ok(FinalizeResponse { id: h.id.clone(), report })
    })
    .await
    .map_err(|e| ApiError::internal(format!("worker: {e}")))?
    .map(Json)
}

#[derive(Deserialize)]
struct PosteriorQuery {
    seq: Option<usize>,
}

#[derive(Serialize)]
struct PosteriorResponse {
    id: String,
    posterior: Option<Arc<PosteriorView>>,
}

async fn get_posterior(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PosteriorQuery>,
) -> Result<Json<PosteriorResponse>, ApiError> {
    let handle = app.handle(&id)?;
    let guard = handle.posteriors.read().expect("posterior lock");
    let (latest, cache) = &*guard;
    let posterior = match q.seq {
        Some(seq) => Some(cache.get(&seq).cloned().ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "no_posterior", format!("no posterior stored for cohort {seq}"))
        })?),
        None => latest.and_then(|s| cache.get(&s).cloned()),
    };
    Ok(Json(PosteriorResponse { id, posterior }))
}
