//! Append-only event log and the session files.
//!
//! A session directory holds `session.json` (state and artifacts, rewritten
//! after every operation) and `events.jsonl` (one event per line, appended).

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::watch;

use super::state::{is_legal_transition, EventKind, Phase, SessionEvent, SessionState};

pub const STATE_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt session state in {path}: {message}")]
    CorruptState { path: PathBuf, message: String },
    #[error("corrupt event record at seq {seq} (line {line}): {message}")]
    CorruptEvent { seq: u64, line: usize, message: String },
    #[error("illegal phase transition {from} -> {to} at seq {seq}")]
    IllegalTransition { seq: u64, from: Phase, to: Phase },
    #[error("event log ends in phase {log} but the state says {state}")]
    PhaseMismatch { log: Phase, state: Phase },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// In-memory event log with an optional backing file. Appends take a short
/// write lock; readers clone slices under a read lock and wait for new
/// events on the watch channel.
#[derive(Debug)]
pub struct EventLog {
    events: RwLock<Vec<SessionEvent>>,
    file: Option<PathBuf>,
    latest: watch::Sender<u64>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::with_events(Vec::new(), None)
    }

    pub fn with_events(events: Vec<SessionEvent>, file: Option<PathBuf>) -> Self {
        let last = events.last().map_or(0, |e| e.seq);
        let (latest, _) = watch::channel(last);
        Self {
            events: RwLock::new(events),
            file,
            latest,
        }
    }

    /// Append one event with the next seq. The line reaches the file with a
    /// single write before it becomes visible to readers.
    pub fn append(&self, kind: EventKind, payload: Value, at: DateTime<Utc>) -> io::Result<SessionEvent> {
        let mut events = self.events.write().expect("event log poisoned");
        let event = SessionEvent {
            seq: events.last().map_or(0, |e| e.seq) + 1,
            kind,
            payload,
            at,
        };
        if let Some(path) = &self.file {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?
                .write_all(line.as_bytes())?;
        }
        events.push(event.clone());
        drop(events);
        self.latest.send_replace(event.seq);
        Ok(event)
    }

    /// Events with seq greater than `cursor`.
    pub fn after(&self, cursor: u64) -> Vec<SessionEvent> {
        let events = self.events.read().expect("event log poisoned");
        // seq is gapless from 1, so seq n sits at index n-1.
        let start = (cursor as usize).min(events.len());
        events[start..].to_vec()
    }

    pub fn all(&self) -> Vec<SessionEvent> {
        self.after(0)
    }

    pub fn last_seq(&self) -> u64 {
        *self.latest.borrow()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }
}

/// Parse an `events.jsonl` text. A record that does not parse, or whose seq
/// breaks the gapless sequence, is reported at the seq it should have had.
pub fn parse_event_log(text: &str) -> Result<Vec<SessionEvent>, StoreError> {
    let mut events: Vec<SessionEvent> = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let expected = events.len() as u64 + 1;
        let corrupt = |message: String| StoreError::CorruptEvent {
            seq: expected,
            line: i + 1,
            message,
        };
        if !line.ends_with('\n') {
            return Err(corrupt("record is not newline-terminated".into()));
        }
        if line.trim().is_empty() {
            return Err(corrupt("empty record".into()));
        }
        let event: SessionEvent = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if event.seq != expected {
            return Err(corrupt(format!("seq {} out of order", event.seq)));
        }
        events.push(event);
    }
    Ok(events)
}

fn phase_field(payload: &Value, key: &str) -> Option<Phase> {
    payload
        .get(key)
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// Replay the phase changes of `events` from Drafting and return the final
/// phase. Every change must start where the previous one ended and follow a
/// declared edge.
pub fn replay_phases(events: &[SessionEvent]) -> Result<Phase, StoreError> {
    let mut phase = Phase::Drafting;
    for e in events.iter().filter(|e| e.kind == EventKind::PhaseChange) {
        let (Some(from), Some(to)) = (phase_field(&e.payload, "from"), phase_field(&e.payload, "to")) else {
            return Err(StoreError::CorruptEvent {
                seq: e.seq,
                line: e.seq as usize,
                message: "phase_change without from/to".into(),
            });
        };
        if from != phase || !is_legal_transition(from, to) {
            return Err(StoreError::IllegalTransition {
                seq: e.seq,
                from: phase,
                to,
            });
        }
        phase = to;
    }
    Ok(phase)
}

pub fn state_path(workspace: &Path) -> PathBuf {
    workspace.join(STATE_FILE)
}

pub fn events_path(workspace: &Path) -> PathBuf {
    workspace.join(EVENTS_FILE)
}

/// Rewrite `session.json` atomically (temp file + rename).
pub fn save_state(state: &SessionState) -> Result<(), StoreError> {
    let path = state_path(&state.workspace);
    let tmp = state.workspace.join(format!("{STATE_FILE}.tmp"));
    let mut text = serde_json::to_string_pretty(state).expect("state serializes");
    text.push('\n');
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Load a session directory: state, events, and a replay check that the
/// event log agrees with the stored phase.
pub fn load_dir(workspace: &Path) -> Result<(SessionState, Vec<SessionEvent>), StoreError> {
    let spath = state_path(workspace);
    let text = match fs::read_to_string(&spath) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(StoreError::NotFound(workspace.display().to_string()))
        }
        Err(e) => return Err(io_err(&spath)(e)),
    };
    let mut state: SessionState = serde_json::from_str(&text).map_err(|e| StoreError::CorruptState {
        path: spath.clone(),
        message: e.to_string(),
    })?;
    state.workspace = workspace.to_path_buf();
    let epath = events_path(workspace);
    let events = match fs::read_to_string(&epath) {
        Ok(t) => parse_event_log(&t)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(&epath)(e)),
    };
    let log = replay_phases(&events)?;
    if log != state.phase {
        return Err(StoreError::PhaseMismatch {
            log,
            state: state.phase,
        });
    }
    Ok((state, events))
}
