//! The orchestrator: phase machine, event log, persistence and the HTTP
//! service over them.

mod engine;
pub mod service;
mod state;
pub mod store;

pub use engine::{
    allowed_phases, check_session_id, message_route, ActionOutcome, LoopRecord, Runtime, RuntimeFactory, Session,
    SessionError, SystemRuntime, TreeEntry, TreeListing,
};
pub use state::{
    is_legal_transition, phase_after, EventKind, FixState, Phase, SessionConfig, SessionEvent, SessionState,
};
pub use store::{EventLog, StoreError};
