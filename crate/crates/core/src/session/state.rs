use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{GenerationDirectives, DEFAULT_LLM_REPAIR_ATTEMPTS};
use crate::codetree::DEFAULT_ROOT_LABEL;
use crate::gateway::{BackendConfig, ChatTurn, DEFAULT_MODEL};
use crate::runtime_tools::{Artifacts, SideEffect, DEFAULT_ENGINE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Drafting,
    Finalized,
    Generated,
    Running,
    Fixing,
    Closed,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Drafting,
        Phase::Finalized,
        Phase::Generated,
        Phase::Running,
        Phase::Fixing,
        Phase::Closed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Drafting => "drafting",
            Phase::Finalized => "finalized",
            Phase::Generated => "generated",
            Phase::Running => "running",
            Phase::Fixing => "fixing",
            Phase::Closed => "closed",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The declared edges. Self-loops are not transitions and never logged.
pub fn is_legal_transition(from: Phase, to: Phase) -> bool {
    use Phase::*;
    matches!(
        (from, to),
        (Drafting, Finalized)
            | (Finalized, Generated)
            | (Generated, Running)
            | (Running, Fixing)
            | (Fixing, Running)
    ) || (to == Closed && from != Closed)
}

/// Phase after a tool side effect. Effects that do not move the phase from
/// `phase` return it unchanged.
pub fn phase_after(phase: Phase, effect: &SideEffect) -> Phase {
    use Phase::*;
    match (phase, effect) {
        (Drafting, SideEffect::SpecSaved { .. }) => Finalized,
        (Finalized, SideEffect::TreeSaved { .. }) => Generated,
        (Running, SideEffect::TreeUpdated { .. }) => Fixing,
        (Generated | Fixing, SideEffect::ComposeLaunched { success: true }) => Running,
        (p, _) => p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default = "default_max_fix")]
    pub max_fix_iterations: u32,
    #[serde(default = "default_max_rounds")]
    pub max_tool_rounds: u32,
    /// Run fix iterations back to back instead of waiting for the user.
    #[serde(default)]
    pub auto_continue: bool,
    #[serde(default = "default_backend")]
    pub backend: BackendConfig,
    #[serde(default)]
    pub directives: GenerationDirectives,
    #[serde(default = "default_base_url")]
    pub service_base_url: String,
    #[serde(default = "default_root_label")]
    pub root_label: String,
    #[serde(default = "default_engine")]
    pub engine: String,
    #[serde(default = "default_command_timeout")]
    pub command_timeout_secs: u64,
    #[serde(default = "default_repair_attempts")]
    pub llm_repair_attempts: usize,
}

fn default_max_fix() -> u32 {
    5
}
fn default_max_rounds() -> u32 {
    8
}
fn default_backend() -> BackendConfig {
    BackendConfig::scripted(DEFAULT_MODEL)
}
fn default_base_url() -> String {
    "http://localhost:3000".to_owned()
}
fn default_root_label() -> String {
    DEFAULT_ROOT_LABEL.to_owned()
}
fn default_engine() -> String {
    DEFAULT_ENGINE.to_owned()
}
fn default_command_timeout() -> u64 {
    600
}
fn default_repair_attempts() -> usize {
    DEFAULT_LLM_REPAIR_ATTEMPTS
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_fix_iterations: default_max_fix(),
            max_tool_rounds: default_max_rounds(),
            auto_continue: false,
            backend: default_backend(),
            directives: GenerationDirectives::default(),
            service_base_url: default_base_url(),
            root_label: default_root_label(),
            engine: default_engine(),
            command_timeout_secs: default_command_timeout(),
            llm_repair_attempts: default_repair_attempts(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_fix_iterations < 1 {
            return Err("max_fix_iterations must be at least 1".into());
        }
        if self.max_tool_rounds < 1 {
            return Err("max_tool_rounds must be at least 1".into());
        }
        if self.command_timeout_secs < 1 {
            return Err("command_timeout_secs must be at least 1".into());
        }
        url::Url::parse(&self.service_base_url)
            .map_err(|e| format!("service_base_url: {e}"))?;
        crate::codetree::check_path(&self.root_label)
            .map_err(|e| format!("root_label: {e}"))?;
        self.directives.validate()?;
        self.backend.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UserMsg,
    AgentMsg,
    ToolCall,
    ToolResult,
    PhaseChange,
    ArtifactSaved,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    pub at: DateTime<Utc>,
}

/// Progress of the current fix episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixState {
    /// Iterations run in the open episode.
    pub iterations: u32,
    /// An episode is waiting for the user to continue it.
    pub awaiting_continuation: bool,
    #[serde(default)]
    pub issue: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub phase: Phase,
    pub workspace: PathBuf,
    pub created_at: DateTime<Utc>,
    pub config: SessionConfig,
    /// Full-history role transcripts, keyed by role name.
    pub transcripts: BTreeMap<String, Vec<ChatTurn>>,
    pub artifacts: Artifacts,
    pub fix: FixState,
}

impl SessionState {
    pub fn fix_iterations(&self) -> u32 {
        self.fix.iterations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges() {
        let legal: Vec<(Phase, Phase)> = Phase::ALL
            .iter()
            .flat_map(|&a| Phase::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| is_legal_transition(a, b))
            .collect();
        // 5 forward/back edges plus 5 closes.
        assert_eq!(legal.len(), 10);
        assert!(!is_legal_transition(Phase::Drafting, Phase::Generated));
        assert!(!is_legal_transition(Phase::Closed, Phase::Drafting));
        assert!(!is_legal_transition(Phase::Closed, Phase::Closed));
    }

    #[test]
    fn config_defaults() {
        let c = SessionConfig::default();
        assert_eq!((c.max_fix_iterations, c.max_tool_rounds), (5, 8));
        assert!(c.validate().is_ok());
        let parsed: SessionConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, c);
        let bad = SessionConfig {
            max_fix_iterations: 0,
            ..c
        };
        assert!(bad.validate().is_err());
    }
}
