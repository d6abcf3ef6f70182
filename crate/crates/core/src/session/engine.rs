use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::state::{
    is_legal_transition, phase_after, EventKind, FixState, Phase, SessionConfig, SessionEvent, SessionState,
};
use super::store::{self, events_path, EventLog, StoreError};
use crate::agents::{
    self, code_tester_step, finalize_step, json_cleaner_run, render_system_prompt, spec_generator_step, AgentRole,
    ToolEffect,
};
use crate::clock::{Clock, SystemClock};
use crate::codetree::{load_snapshot, FileTree};
use crate::gateway::{ChatTurn, Gateway};
use crate::probe::{derive_probes, execute_plan, read_probe_report, write_probe_report, ProbeReport};
use crate::runtime_tools::{
    self, check_docker_compose_status, get_docker_compose_logs, run_docker_compose, save_json, update_json,
    Artifacts, ErrorSummary, HttpTransport, LogBundle, ProcessRunner, ServiceState, ServiceStatus, SideEffect,
    SystemRunner, ToolEnv, ToolRegistry, ToolResult, UreqTransport, DEFAULT_LOG_TAIL,
};
use crate::spec_engine::{load_current_spec, parse_spec};

/// Everything a session needs from the outside world.
pub struct Runtime {
    pub gateway: Arc<Gateway>,
    pub runner: Arc<dyn ProcessRunner>,
    pub transport: Arc<dyn HttpTransport>,
    pub clock: Arc<dyn Clock>,
}

/// Builds the [`Runtime`] for a session from its config.
pub trait RuntimeFactory: Send + Sync {
    fn build(&self, config: &SessionConfig) -> Result<Runtime, SessionError>;
}

/// Real processes, real HTTP, system clock, gateway from the backend config.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemRuntime;

pub const PROBE_HTTP_TIMEOUT: Duration = Duration::from_secs(10);

impl RuntimeFactory for SystemRuntime {
    fn build(&self, config: &SessionConfig) -> Result<Runtime, SessionError> {
        let gateway = Gateway::from_config(&config.backend).map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(Runtime {
            gateway: Arc::new(gateway),
            runner: Arc::new(SystemRunner),
            transport: Arc::new(UreqTransport::new(PROBE_HTTP_TIMEOUT)),
            clock: Arc::new(SystemClock),
        })
    }
}

impl<F> RuntimeFactory for F
where
    F: Fn(&SessionConfig) -> Result<Runtime, SessionError> + Send + Sync,
{
    fn build(&self, config: &SessionConfig) -> Result<Runtime, SessionError> {
        self(config)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("workspace {0} already exists")]
    WorkspaceCollision(PathBuf),
    #[error("invalid session id \"{0}\"")]
    InvalidId(String),
    #[error("{op} is not allowed in phase {phase}; allowed in: {}", .allowed.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", "))]
    WrongPhase {
        op: &'static str,
        phase: Phase,
        allowed: Vec<Phase>,
    },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("{0} not available yet")]
    Missing(&'static str),
    #[error("{0}")]
    Operation(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Outcome of an operation: the events it appended plus an operation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub ok: bool,
    pub phase: Phase,
    pub events: Vec<SessionEvent>,
    pub result: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    /// Iterations run in the episode so far.
    pub iterations: u32,
    pub resolved: bool,
    /// Not resolved, bound not reached, waiting for the user.
    pub awaiting_continuation: bool,
    /// The iteration bound ended the episode.
    pub exhausted: bool,
    pub summaries: Vec<ErrorSummary>,
    pub events: Vec<SessionEvent>,
}

/// Entries of the current tree without contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeListing {
    pub version_index: u32,
    pub root_label: String,
    pub files: Vec<TreeEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEntry {
    pub path: String,
    pub bytes: usize,
}

const SESSION_ID_MAX: usize = 64;

pub fn check_session_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty()
        && id.len() <= SESSION_ID_MAX
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !id.starts_with('-');
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidId(id.to_owned()))
    }
}

pub struct Session {
    state: SessionState,
    log: Arc<EventLog>,
    rt: Runtime,
    registry: ToolRegistry,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.state.session_id)
            .field("phase", &self.state.phase)
            .finish()
    }
}

fn tool_env<'a>(workspace: &'a Path, config: &'a SessionConfig, rt: &'a Runtime) -> ToolEnv<'a> {
    ToolEnv {
        workspace,
        root_label: &config.root_label,
        engine: &config.engine,
        runner: rt.runner.as_ref(),
        transport: rt.transport.as_ref(),
        gateway: rt.gateway.as_ref(),
        clock: rt.clock.as_ref(),
        directives: &config.directives,
        service_base_url: &config.service_base_url,
        command_timeout: Duration::from_secs(config.command_timeout_secs),
        llm_repair_attempts: config.llm_repair_attempts,
    }
}

fn prompt_context(config: &SessionConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("root_label".to_owned(), config.root_label.clone()),
        ("service_base_url".to_owned(), config.service_base_url.clone()),
    ])
}

fn seed_transcripts(config: &SessionConfig) -> Result<BTreeMap<String, Vec<ChatTurn>>, SessionError> {
    let ctx = prompt_context(config);
    let mut out = BTreeMap::new();
    for role in [AgentRole::SpecGenerator, AgentRole::CodeTester] {
        let system = render_system_prompt(role, &config.directives, &ctx).map_err(|e| SessionError::Config(e.to_string()))?;
        out.insert(role.name().to_owned(), vec![ChatTurn::system(system)]);
    }
    Ok(out)
}

/// Role a user message goes to in `phase`.
pub fn message_route(phase: Phase) -> Option<AgentRole> {
    match phase {
        Phase::Drafting | Phase::Finalized => Some(AgentRole::SpecGenerator),
        Phase::Generated | Phase::Running | Phase::Fixing => Some(AgentRole::CodeTester),
        Phase::Closed => None,
    }
}

/// Phases in which each operation may run.
pub fn allowed_phases(op: &str) -> &'static [Phase] {
    use Phase::*;
    match op {
        "message" => &[Drafting, Finalized, Generated, Running, Fixing],
        "finalize" => &[Drafting, Finalized],
        "generate" => &[Finalized, Generated],
        "run" | "status" | "logs" => &[Generated, Running, Fixing],
        "probe" | "fix" => &[Running, Fixing],
        "close" => &[Drafting, Finalized, Generated, Running, Fixing],
        _ => &[],
    }
}

impl Session {
    /// New session in `root/<id>`. The directory must not exist yet.
    pub fn create(
        root: &Path,
        id: Option<String>,
        config: SessionConfig,
        factory: &dyn RuntimeFactory,
    ) -> Result<Session, SessionError> {
        config.validate().map_err(SessionError::Config)?;
        let id = id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
        check_session_id(&id)?;
        let rt = factory.build(&config)?;
        fs::create_dir_all(root).map_err(io_at(root))?;
        let workspace = root.join(&id);
        match fs::create_dir(&workspace) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(SessionError::WorkspaceCollision(workspace))
            }
            Err(e) => return Err(io_at(&workspace)(e)),
        }
        let state = SessionState {
            session_id: id,
            phase: Phase::Drafting,
            workspace: workspace.clone(),
            created_at: rt.clock.now(),
            transcripts: seed_transcripts(&config)?,
            config,
            artifacts: Artifacts::default(),
            fix: FixState::default(),
        };
        let session = Session {
            log: Arc::new(EventLog::with_events(Vec::new(), Some(events_path(&workspace)))),
            state,
            rt,
            registry: ToolRegistry::standard(),
        };
        fs::write(events_path(&workspace), "").map_err(io_at(&workspace))?;
        session.persist()?;
        Ok(session)
    }

    /// Reopen `root/<id>` from disk.
    pub fn open(root: &Path, id: &str, factory: &dyn RuntimeFactory) -> Result<Session, SessionError> {
        check_session_id(id)?;
        let workspace = root.join(id);
        let (state, events) = store::load_dir(&workspace).map_err(|e| match e {
            StoreError::NotFound(_) => StoreError::NotFound(id.to_owned()),
            other => other,
        })?;
        let rt = factory.build(&state.config)?;
        Ok(Session {
            log: Arc::new(EventLog::with_events(events, Some(events_path(&workspace)))),
            state,
            rt,
            registry: ToolRegistry::standard(),
        })
    }

    pub fn persist(&self) -> Result<(), SessionError> {
        store::save_state(&self.state).map_err(SessionError::from)
    }

    pub fn id(&self) -> &str {
        &self.state.session_id
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn workspace(&self) -> &Path {
        &self.state.workspace
    }

    pub fn events(&self) -> Arc<EventLog> {
        Arc::clone(&self.log)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.rt.gateway
    }

    fn require(&self, op: &'static str) -> Result<(), SessionError> {
        let allowed = allowed_phases(op);
        if allowed.contains(&self.state.phase) {
            Ok(())
        } else {
            Err(SessionError::WrongPhase {
                op,
                phase: self.state.phase,
                allowed: allowed.to_vec(),
            })
        }
    }

    fn emit(&self, out: &mut Vec<SessionEvent>, kind: EventKind, payload: Value) -> Result<(), SessionError> {
        let event = self
            .log
            .append(kind, payload, self.rt.clock.now())
            .map_err(io_at(&self.state.workspace))?;
        out.push(event);
        Ok(())
    }

    fn set_phase(&mut self, to: Phase, out: &mut Vec<SessionEvent>) -> Result<(), SessionError> {
        let from = self.state.phase;
        if from == to {
            return Ok(());
        }
        assert!(is_legal_transition(from, to), "illegal transition {from} -> {to}");
        self.state.phase = to;
        self.emit(out, EventKind::PhaseChange, json!({"from": from, "to": to}))
    }

    fn apply_effect(&mut self, effect: &SideEffect, out: &mut Vec<SessionEvent>) -> Result<(), SessionError> {
        let saved = match effect {
            SideEffect::SpecSaved { version } => Some(json!({"artifact": "spec", "version": version})),
            SideEffect::TreeSaved { version } => Some(json!({"artifact": "tree", "version": version})),
            SideEffect::TreeUpdated { version, changed_paths } => {
                Some(json!({"artifact": "tree", "version": version, "changed_paths": changed_paths}))
            }
            SideEffect::ComposeLaunched { .. } => None,
        };
        if let Some(payload) = saved {
            self.emit(out, EventKind::ArtifactSaved, payload)?;
        }
        let next = phase_after(self.state.phase, effect);
        self.set_phase(next, out)
    }

    fn record_tool(
        &mut self,
        role: &str,
        call_id: &str,
        tool: &str,
        arguments: Value,
        result: &ToolResult,
        out: &mut Vec<SessionEvent>,
    ) -> Result<(), SessionError> {
        self.emit(
            out,
            EventKind::ToolCall,
            json!({"role": role, "call_id": call_id, "tool": tool, "arguments": arguments}),
        )?;
        self.emit(
            out,
            EventKind::ToolResult,
            json!({"role": role, "call_id": call_id, "tool": tool, "ok": result.ok, "payload": result.payload}),
        )?;
        if let Some(effect) = &result.effect {
            self.apply_effect(effect, out)?;
        }
        Ok(())
    }

    fn record_effects(&mut self, role: AgentRole, effects: &[ToolEffect], out: &mut Vec<SessionEvent>) -> Result<(), SessionError> {
        for e in effects {
            self.record_tool(role.name(), &e.call_id, &e.tool, e.arguments.clone(), &e.result, out)?;
        }
        Ok(())
    }

    fn outcome(&self, ok: bool, events: Vec<SessionEvent>, result: Value) -> Result<ActionOutcome, SessionError> {
        self.persist()?;
        Ok(ActionOutcome {
            ok,
            phase: self.state.phase,
            events,
            result,
        })
    }

    /// Route a user message to the phase's agent. Agent and gateway
    /// failures become error events; the session stays usable.
    pub fn handle_user_message(&mut self, text: &str) -> Result<ActionOutcome, SessionError> {
        let mut out = Vec::new();
        let Some(role) = message_route(self.state.phase) else {
            self.emit(
                &mut out,
                EventKind::Error,
                json!({"message": "session is closed", "phase": self.state.phase}),
            )?;
            self.persist()?;
            return Err(SessionError::WrongPhase {
                op: "message",
                phase: self.state.phase,
                allowed: allowed_phases("message").to_vec(),
            });
        };
        if text.trim().is_empty() {
            return Err(SessionError::Invalid("message text is empty".into()));
        }
        self.emit(&mut out, EventKind::UserMsg, json!({"text": text, "role": role.name()}))?;

        let mut transcript = self.state.transcripts.remove(role.name()).unwrap_or_default();
        let rounds = self.state.config.max_tool_rounds as usize;
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let arts = &mut self.state.artifacts;
        let step = match role {
            AgentRole::SpecGenerator => {
                spec_generator_step(&self.rt.gateway, &self.registry, &env, arts, &mut transcript, text, rounds)
                    .map(|o| (o.reply, o.effects, false))
            }
            _ => code_tester_step(&self.rt.gateway, &self.registry, &env, arts, &mut transcript, text, rounds)
                .map(|o| (o.reply, o.effects, o.exhausted)),
        };
        self.state.transcripts.insert(role.name().to_owned(), transcript);

        match step {
            Ok((reply, effects, exhausted)) => {
                self.record_effects(role, &effects, &mut out)?;
                self.emit(
                    &mut out,
                    EventKind::AgentMsg,
                    json!({"role": role.name(), "text": reply, "rounds_exhausted": exhausted}),
                )?;
                self.outcome(true, out, json!({"reply": reply}))
            }
            Err(e) => {
                self.emit(&mut out, EventKind::Error, json!({"role": role.name(), "message": e.to_string()}))?;
                self.outcome(false, out, json!({"error": e.to_string()}))
            }
        }
    }

    /// Save the latest draft as the finalized spec.
    pub fn finalize(&mut self) -> Result<ActionOutcome, SessionError> {
        self.require("finalize")?;
        let mut out = Vec::new();
        let role = AgentRole::SpecGenerator;
        let mut transcript = self.state.transcripts.remove(role.name()).unwrap_or_default();
        let rounds = self.state.config.max_tool_rounds as usize;
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let step = finalize_step(
            &self.rt.gateway,
            &self.registry,
            &env,
            &mut self.state.artifacts,
            &mut transcript,
            rounds,
        );
        self.state.transcripts.insert(role.name().to_owned(), transcript);
        match step {
            Ok(o) => {
                self.record_effects(role, &o.effects, &mut out)?;
                if !o.reply.is_empty() {
                    self.emit(&mut out, EventKind::AgentMsg, json!({"role": role.name(), "text": o.reply}))?;
                }
                match o.spec_saved {
                    Some(v) => self.outcome(true, out, json!({"version": v})),
                    None => {
                        let msg = "no valid specification draft to save";
                        self.emit(&mut out, EventKind::Error, json!({"role": role.name(), "message": msg}))?;
                        self.outcome(false, out, json!({"error": msg}))
                    }
                }
            }
            Err(e) => {
                self.emit(&mut out, EventKind::Error, json!({"role": role.name(), "message": e.to_string()}))?;
                self.outcome(false, out, json!({"error": e.to_string()}))
            }
        }
    }

    /// Code generator, then JSON cleaner, then save_json.
    pub fn generate_code(&mut self) -> Result<ActionOutcome, SessionError> {
        self.require("generate")?;
        let mut out = Vec::new();
        let spec_text = load_current_spec(&self.state.workspace).map_err(io_at(&self.state.workspace))?;
        let gen = agents::code_generator_run(
            &self.rt.gateway,
            &self.registry,
            &spec_text,
            &self.state.config.directives,
            &self.state.config.root_label,
        );
        let arts = &mut self.state.artifacts;
        arts.task_transcripts
            .insert(AgentRole::CodeGenerator.name().to_owned(), gen.transcript);
        let raw = match gen.result {
            Ok(r) => r,
            Err(e) => return self.fail_with(AgentRole::CodeGenerator, e.to_string(), out),
        };
        arts.last_raw_tree = Some(raw.clone());

        let cleaned = json_cleaner_run(&self.rt.gateway, &raw, self.state.config.llm_repair_attempts);
        if !cleaned.transcript.is_empty() {
            arts.task_transcripts
                .insert(AgentRole::JsonCleaner.name().to_owned(), cleaned.transcript);
        }
        let cleaned = match cleaned.result {
            Ok(c) => c,
            Err(e) => return self.fail_with(AgentRole::JsonCleaner, e.to_string(), out),
        };
        let tree_json = cleaned.tree.to_json();
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let result = save_json(&env, &mut self.state.artifacts, &tree_json);
        let call_id = format!("generate-{}", self.state.artifacts.tree_versions.len() + usize::from(!result.ok));
        self.record_tool(
            AgentRole::CodeGenerator.name(),
            &call_id,
            runtime_tools::SAVE_JSON,
            json!({"json_string": tree_json}),
            &result,
            &mut out,
        )?;
        if result.ok {
            let summary = json!({
                "file_count": cleaned.tree.len(),
                "repair_rules": cleaned.report.rules_applied,
                "llm_repair_attempts": cleaned.llm_attempts,
            });
            self.outcome(true, out, summary)
        } else {
            self.emit(
                &mut out,
                EventKind::Error,
                json!({"role": AgentRole::CodeGenerator.name(), "message": "generated code was rejected", "details": result.payload}),
            )?;
            self.outcome(false, out, result.payload)
        }
    }

    fn fail_with(&mut self, role: AgentRole, message: String, mut out: Vec<SessionEvent>) -> Result<ActionOutcome, SessionError> {
        self.emit(&mut out, EventKind::Error, json!({"role": role.name(), "message": message}))?;
        self.outcome(false, out, json!({"error": message}))
    }

    /// `compose up --build -d`.
    pub fn run(&mut self) -> Result<ActionOutcome, SessionError> {
        self.require("run")?;
        let mut out = Vec::new();
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let result = run_docker_compose(&env, &mut self.state.artifacts);
        self.record_tool("user", "run", runtime_tools::RUN_DOCKER_COMPOSE, json!({}), &result, &mut out)?;
        self.outcome(result.ok, out, result.payload)
    }

    /// Current container status. Read-only: nothing is logged or cached.
    pub fn status(&self) -> Result<Vec<ServiceStatus>, SessionError> {
        self.require("status")?;
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let mut scratch = self.state.artifacts.clone();
        check_docker_compose_status(&env, &mut scratch).map_err(SessionError::Operation)
    }

    /// Recent logs with error summaries. Read-only.
    pub fn logs(&self, tail: usize) -> Result<(LogBundle, Vec<ErrorSummary>), SessionError> {
        self.require("logs")?;
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let mut scratch = self.state.artifacts.clone();
        let bundle = get_docker_compose_logs(&env, &mut scratch, tail).map_err(SessionError::Operation)?;
        Ok((bundle, scratch.last_errors))
    }

    /// Derive probes from the current spec, run them and save the report.
    pub fn probe(&mut self) -> Result<(ActionOutcome, Option<ProbeReport>), SessionError> {
        self.require("probe")?;
        let mut out = Vec::new();
        let spec_text = load_current_spec(&self.state.workspace).map_err(io_at(&self.state.workspace))?;
        let doc = match parse_spec(&spec_text) {
            Ok(d) => d,
            Err(e) => return Ok((self.fail_msg("probe", e.to_string(), out)?, None)),
        };
        let plan = match derive_probes(&doc, &self.state.config.service_base_url, 0) {
            Ok(p) => p,
            Err(e) => return Ok((self.fail_msg("probe", e.to_string(), out)?, None)),
        };
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let outcomes = execute_plan(&plan, &env);
        let report = ProbeReport::new(plan, outcomes);
        write_probe_report(&self.state.workspace, &report).map_err(io_at(&self.state.workspace))?;
        self.emit(
            &mut out,
            EventKind::ArtifactSaved,
            json!({"artifact": "probe_report", "passed": report.passed, "failed": report.failed}),
        )?;
        let ok = report.all_passed();
        let summary = json!({"passed": report.passed, "failed": report.failed});
        Ok((self.outcome(ok, out, summary)?, Some(report)))
    }

    fn fail_msg(&mut self, role: &str, message: String, mut out: Vec<SessionEvent>) -> Result<ActionOutcome, SessionError> {
        self.emit(&mut out, EventKind::Error, json!({"role": role, "message": message}))?;
        self.outcome(false, out, json!({"error": message}))
    }

    /// Start a fix episode for `issue`, or continue the open one. Runs one
    /// iteration, or iterations back to back with `auto_continue`, until
    /// resolved or the bound is reached.
    pub fn fix_loop(&mut self, issue: Option<&str>) -> Result<LoopRecord, SessionError> {
        self.require("fix")?;
        let issue = issue.map(str::trim).filter(|s| !s.is_empty());
        if !self.state.fix.awaiting_continuation {
            let Some(issue) = issue else {
                return Err(SessionError::Invalid("an issue is required to start a fix loop".into()));
            };
            self.state.fix = FixState {
                iterations: 0,
                awaiting_continuation: false,
                issue: issue.to_owned(),
            };
        } else if let Some(extra) = issue {
            self.state.fix.issue = extra.to_owned();
        }
        self.state.fix.awaiting_continuation = false;

        let max = self.state.config.max_fix_iterations;
        let mut out = Vec::new();
        loop {
            self.state.fix.iterations += 1;
            let n = self.state.fix.iterations;
            let resolved = self.fix_iteration(n, &mut out)?;
            let summaries = self.state.artifacts.last_errors.clone();
            if resolved {
                self.emit(
                    &mut out,
                    EventKind::AgentMsg,
                    json!({"role": "fix_loop", "iteration": n, "text": format!("resolved after {n} iteration(s)")}),
                )?;
                self.state.fix = FixState::default();
                self.persist()?;
                return Ok(LoopRecord {
                    iterations: n,
                    resolved: true,
                    awaiting_continuation: false,
                    exhausted: false,
                    summaries,
                    events: out,
                });
            }
            if n >= max {
                self.emit(
                    &mut out,
                    EventKind::Error,
                    json!({
                        "role": "fix_loop",
                        "iteration": n,
                        "message": format!("not resolved after {n} iteration(s)"),
                        "summaries": summaries,
                    }),
                )?;
                self.state.fix = FixState::default();
                self.persist()?;
                return Ok(LoopRecord {
                    iterations: n,
                    resolved: false,
                    awaiting_continuation: false,
                    exhausted: true,
                    summaries,
                    events: out,
                });
            }
            if !self.state.config.auto_continue {
                self.emit(
                    &mut out,
                    EventKind::AgentMsg,
                    json!({
                        "role": "fix_loop",
                        "iteration": n,
                        "text": format!("iteration {n} of {max} did not resolve the issue; continue to run another"),
                        "summaries": summaries,
                    }),
                )?;
                self.state.fix.awaiting_continuation = true;
                self.persist()?;
                return Ok(LoopRecord {
                    iterations: n,
                    resolved: false,
                    awaiting_continuation: true,
                    exhausted: false,
                    summaries,
                    events: out,
                });
            }
        }
    }

    /// update_json, relaunch, status and logs. True when the services run
    /// and the logs show no errors.
    fn fix_iteration(&mut self, n: u32, out: &mut Vec<SessionEvent>) -> Result<bool, SessionError> {
        let issue = self.state.fix.issue.clone();
        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);

        let updated = update_json(&env, &mut self.state.artifacts, &issue);
        let id = |step: &str| format!("fix-{n}-{step}");
        self.record_tool("fix_loop", &id("update"), runtime_tools::UPDATE_JSON, json!({"issue": issue}), &updated, out)?;

        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let launched = run_docker_compose(&env, &mut self.state.artifacts);
        self.record_tool("fix_loop", &id("run"), runtime_tools::RUN_DOCKER_COMPOSE, json!({}), &launched, out)?;

        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let status = check_docker_compose_status(&env, &mut self.state.artifacts);
        let status_result = match &status {
            Ok(s) => ToolResult::success(json!({"services": s})),
            Err(e) => ToolResult::failure(e.clone()),
        };
        self.record_tool(
            "fix_loop",
            &id("status"),
            runtime_tools::CHECK_DOCKER_COMPOSE_STATUS,
            json!({}),
            &status_result,
            out,
        )?;

        let env = tool_env(&self.state.workspace, &self.state.config, &self.rt);
        let logs = get_docker_compose_logs(&env, &mut self.state.artifacts, DEFAULT_LOG_TAIL);
        let logs_result = match &logs {
            Ok(b) => ToolResult::success(json!({
                "line_count": b.line_count(),
                "error_summaries": self.state.artifacts.last_errors,
            })),
            Err(e) => ToolResult::failure(e.clone()),
        };
        self.record_tool(
            "fix_loop",
            &id("logs"),
            runtime_tools::GET_DOCKER_COMPOSE_LOGS,
            json!({"tail": DEFAULT_LOG_TAIL}),
            &logs_result,
            out,
        )?;

        let running = matches!(&status, Ok(s) if !s.is_empty() && s.iter().all(|x| x.state == ServiceState::Running));
        Ok(launched.ok && running && logs.is_ok() && self.state.artifacts.last_errors.is_empty())
    }

    pub fn close(&mut self) -> Result<ActionOutcome, SessionError> {
        self.require("close")?;
        let mut out = Vec::new();
        self.set_phase(Phase::Closed, &mut out)?;
        self.outcome(true, out, json!({}))
    }

    pub fn spec_text(&self) -> Result<String, SessionError> {
        if self.state.artifacts.spec_versions.is_empty() {
            return Err(SessionError::Missing("specification"));
        }
        load_current_spec(&self.state.workspace).map_err(io_at(&self.state.workspace))
    }

    pub fn current_tree(&self) -> Result<FileTree, SessionError> {
        let Some(v) = self.state.artifacts.tree_versions.last() else {
            return Err(SessionError::Missing("code"));
        };
        load_snapshot(&self.state.workspace, v, &self.state.config.root_label).map_err(io_at(&self.state.workspace))
    }

    pub fn tree_listing(&self) -> Result<TreeListing, SessionError> {
        let tree = self.current_tree()?;
        let version_index = self.state.artifacts.tree_versions.last().map_or(0, |v| v.version_index);
        Ok(TreeListing {
            version_index,
            root_label: tree.root_label.clone(),
            files: tree
                .entries
                .iter()
                .map(|(p, c)| TreeEntry {
                    path: p.clone(),
                    bytes: c.len(),
                })
                .collect(),
        })
    }

    pub fn probe_report(&self) -> Result<ProbeReport, SessionError> {
        match read_probe_report(&self.state.workspace) {
            Ok(r) => Ok(r),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(SessionError::Missing("probe report")),
            Err(e) => Err(io_at(&self.state.workspace)(e)),
        }
    }

    /// State and full event log as one JSON document.
    pub fn export(&self) -> Value {
        json!({
            "state": self.state,
            "events": self.log.all(),
        })
    }
}
