use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use lse_dose::design::{DesignKind, TrialConfig, TrialSession};
use lse_dose::{Error, McmcConfig, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    CohortSubmitted,
    Stopped,
    Finalized,
}

/// One line of a trial's append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    pub timestamp: String,
}

impl TrialEvent {
    pub fn new(seq: u64, kind: EventKind, payload: Value) -> Self {
        Self { seq, kind, payload, timestamp: chrono::Utc::now().to_rfc3339() }
    }
}

pub fn created_payload(id: &str, design: DesignKind, config: &TrialConfig) -> Value {
    json!({ "id": id, "design": design, "config": config })
}

pub fn append_event(path: &Path, event: &TrialEvent) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(event).map_err(std::io::Error::other)?;
    line.push(b'\n');
    f.write_all(&line)?;
    f.sync_data()
}

pub fn read_events(path: &Path) -> Result<Vec<TrialEvent>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CreatedPayload {
    id: String,
    design: DesignKind,
    config: TrialConfig,
}

#[derive(Deserialize)]
struct CohortPayload {
    dose_level: usize,
    outcomes: Vec<u8>,
    #[serde(rename = "override", default)]
    allow_override: bool,
    next_dose: Option<usize>,
}

/// Rebuild a session from its log. Every logged decision must reproduce.
pub fn replay_events(events: &[TrialEvent], budget: &McmcConfig) -> Result<(String, TrialSession)> {
    let first = events.first().ok_or_else(|| Error::Parse("empty event log".into()))?;
    if first.kind != EventKind::Created {
        return Err(Error::Parse("event log must start with a created event".into()));
    }
    let created: CreatedPayload =
        serde_json::from_value(first.payload.clone()).map_err(|e| Error::Parse(format!("created event: {e}")))?;
    let mut session = TrialSession::with_budget(created.design, created.config, *budget)?;
    for (i, ev) in events.iter().enumerate() {
        if ev.seq != i as u64 {
            return Err(Error::Parse(format!("event {i} has seq {}", ev.seq)));
        }
        match ev.kind {
            EventKind::Created if i == 0 => {}
            EventKind::Created => return Err(Error::Parse("repeated created event".into())),
            EventKind::CohortSubmitted => {
                let p: CohortPayload =
                    serde_json::from_value(ev.payload.clone()).map_err(|e| Error::Parse(format!("event {i}: {e}")))?;
                let outcomes: Vec<bool> = p.outcomes.iter().map(|&o| o == 1).collect();
                let rec = session.submit_cohort(p.dose_level, &outcomes, p.allow_override)?;
                if rec.decision.next_dose != p.next_dose {
                    return Err(Error::State(format!(
                        "replay diverged at event {i}: logged next dose {:?}, recomputed {:?}",
                        p.next_dose, rec.decision.next_dose
                    )));
                }
            }
            EventKind::Stopped => {}
            EventKind::Finalized => {
                session.finalize()?;
            }
        }
    }
    Ok((created.id, session))
}
