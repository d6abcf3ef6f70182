use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{render_system_prompt, AgentRole, GenerationDirectives, PromptError};
use crate::codetree::{parse_filetree, repair_json, FileTree, RepairReport, TreeError};
use crate::gateway::{ChatTurn, Gateway, GatewayError, ToolChoice, ToolSchema};
use crate::runtime_tools::{save_openapi_spec, Artifacts, SideEffect, ToolEnv, ToolRegistry, ToolResult};
use crate::spec_engine::{parse_spec, SpecVersion};

pub const DEFAULT_LLM_REPAIR_ATTEMPTS: usize = 2;

/// One executed tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEffect {
    pub call_id: String,
    pub tool: String,
    /// Parsed arguments, or the raw text when they are not JSON.
    pub arguments: Value,
    pub result: ToolResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reply: String,
    pub effects: Vec<ToolEffect>,
    /// Gateway calls made.
    pub rounds: usize,
    /// True when the round bound stopped the model.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecStepOutcome {
    pub reply: String,
    pub spec_saved: Option<SpecVersion>,
    pub effects: Vec<ToolEffect>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("JSON still invalid after {attempts} repair attempt(s): {message}")]
    Cleaner {
        message: String,
        last_candidate: String,
        attempts: usize,
    },
    #[error("{0}")]
    Rejected(String),
}

/// Result of a task-scoped role plus the transcript it used.
#[derive(Debug)]
pub struct TaskRun<T> {
    pub result: Result<T, AgentError>,
    pub transcript: Vec<ChatTurn>,
}

impl<T> TaskRun<T> {
    fn fail(e: impl Into<AgentError>, transcript: Vec<ChatTurn>) -> Self {
        Self {
            result: Err(e.into()),
            transcript,
        }
    }
}

fn parse_arguments(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

/// Gateway round-trips with tool dispatch until the model answers in text or
/// `max_rounds` calls were made. Tool calls outside the role's allowance,
/// unknown tools and bad arguments go back to the model as failed results.
#[allow(clippy::too_many_arguments)]
fn tool_loop(
    role: AgentRole,
    gateway: &Gateway,
    registry: &ToolRegistry,
    env: &ToolEnv<'_>,
    arts: &mut Artifacts,
    transcript: &mut Vec<ChatTurn>,
    max_rounds: usize,
    mut choice: ToolChoice,
) -> Result<StepOutcome, GatewayError> {
    let tools: Vec<ToolSchema> = registry.schemas_for(role.allowed_tools());
    let mut effects = Vec::new();
    for round in 1..=max_rounds.max(1) {
        let turn = match gateway.complete_with(transcript, &tools, choice.clone()) {
            Ok(t) => t,
            Err(GatewayError::Protocol { turn, .. })
                if !turn.tool_calls.is_empty() && turn.validate().is_ok() =>
            {
                *turn
            }
            Err(e) => return Err(e),
        };
        choice = ToolChoice::Auto;
        transcript.push(turn.clone());
        if turn.tool_calls.is_empty() {
            return Ok(StepOutcome {
                reply: turn.content,
                effects,
                rounds: round,
                exhausted: false,
            });
        }
        for call in &turn.tool_calls {
            let result = if role.allowed_tools().contains(&call.name.as_str()) {
                registry.dispatch(env, arts, &call.name, &call.arguments)
            } else {
                ToolResult::failure(format!(
                    "tool \"{}\" is not available to {}",
                    call.name,
                    role.name()
                ))
            };
            transcript.push(ChatTurn::tool(&call.id, result.to_content()));
            effects.push(ToolEffect {
                call_id: call.id.clone(),
                tool: call.name.clone(),
                arguments: parse_arguments(&call.arguments),
                result,
            });
        }
    }
    Ok(StepOutcome {
        reply: format!("Stopped after {} model round(s) without a final answer.", max_rounds.max(1)),
        effects,
        rounds: max_rounds.max(1),
        exhausted: true,
    })
}

/// Run `f` on the transcript; on error the transcript is restored.
fn transactional<T>(
    transcript: &mut Vec<ChatTurn>,
    f: impl FnOnce(&mut Vec<ChatTurn>) -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let len = transcript.len();
    let out = f(transcript);
    if out.is_err() {
        transcript.truncate(len);
    }
    out
}

fn saved_spec(effects: &[ToolEffect]) -> Option<SpecVersion> {
    effects.iter().rev().find_map(|e| match &e.result.effect {
        Some(SideEffect::SpecSaved { version }) => Some(version.clone()),
        _ => None,
    })
}

/// One user message to the spec generator.
pub fn spec_generator_step(
    gateway: &Gateway,
    registry: &ToolRegistry,
    env: &ToolEnv<'_>,
    arts: &mut Artifacts,
    transcript: &mut Vec<ChatTurn>,
    user_message: &str,
    max_rounds: usize,
) -> Result<SpecStepOutcome, GatewayError> {
    transactional(transcript, |t| {
        t.push(ChatTurn::user(user_message));
        let out = tool_loop(AgentRole::SpecGenerator, gateway, registry, env, arts, t, max_rounds, ToolChoice::Auto)?;
        Ok(SpecStepOutcome {
            reply: out.reply,
            spec_saved: saved_spec(&out.effects),
            effects: out.effects,
        })
    })
}

pub const FINALIZE_MESSAGE: &str =
    "The specification is final. Save the latest complete version now with save_openapi_spec.";

/// Explicit finalization: the save tool is forced on the first round. When
/// the model still does not save, the latest draft in the conversation is
/// saved directly.
pub fn finalize_step(
    gateway: &Gateway,
    registry: &ToolRegistry,
    env: &ToolEnv<'_>,
    arts: &mut Artifacts,
    transcript: &mut Vec<ChatTurn>,
    max_rounds: usize,
) -> Result<SpecStepOutcome, GatewayError> {
    let mut outcome = transactional(transcript, |t| {
        t.push(ChatTurn::user(FINALIZE_MESSAGE));
        let forced = ToolChoice::Function(crate::runtime_tools::SAVE_OPENAPI_SPEC.to_owned());
        let out = tool_loop(AgentRole::SpecGenerator, gateway, registry, env, arts, t, max_rounds, forced)?;
        Ok(SpecStepOutcome {
            reply: out.reply,
            spec_saved: saved_spec(&out.effects),
            effects: out.effects,
        })
    })?;
    if outcome.spec_saved.is_none() {
        if let Some(draft) = extract_spec_draft(transcript) {
            let result = save_openapi_spec(env, arts, &draft);
            outcome.effects.push(ToolEffect {
                call_id: "finalize-direct".to_owned(),
                tool: crate::runtime_tools::SAVE_OPENAPI_SPEC.to_owned(),
                arguments: serde_json::json!({ "spec": draft }),
                result,
            });
            outcome.spec_saved = saved_spec(&outcome.effects);
        }
    }
    Ok(outcome)
}

fn fenced_blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                out.push(body[..end].to_owned());
                rest = &body[end + 3..];
            }
            None => break,
        }
    }
    out
}

/// Latest parseable OpenAPI document in assistant turns or in the arguments
/// of earlier save attempts.
pub fn extract_spec_draft(transcript: &[ChatTurn]) -> Option<String> {
    for turn in transcript.iter().rev() {
        if turn.role != crate::gateway::Role::Assistant {
            continue;
        }
        let mut candidates: Vec<String> = Vec::new();
        for call in turn.tool_calls.iter().rev() {
            if let Ok(args) = call.parsed_arguments() {
                if let Some(Value::String(s)) = args.get("spec") {
                    candidates.push(s.clone());
                }
            }
        }
        let mut blocks = fenced_blocks(&turn.content);
        blocks.reverse();
        candidates.extend(blocks);
        candidates.push(turn.content.clone());
        if let Some(c) = candidates.into_iter().find(|c| parse_spec(c).is_ok()) {
            return Some(c);
        }
    }
    None
}

/// The code generator's raw output for `spec_text`, untouched.
pub fn code_generator_run(
    gateway: &Gateway,
    registry: &ToolRegistry,
    spec_text: &str,
    directives: &GenerationDirectives,
    root_label: &str,
) -> TaskRun<String> {
    let ctx = BTreeMap::from([("root_label".to_owned(), root_label.to_owned())]);
    let system = match render_system_prompt(AgentRole::CodeGenerator, directives, &ctx) {
        Ok(s) => s,
        Err(e) => return TaskRun::fail(e, Vec::new()),
    };
    let mut transcript = vec![
        ChatTurn::system(system),
        ChatTurn::user(format!("Generate the server code for this specification:\n\n{spec_text}")),
    ];
    let tools = registry.schemas_for(AgentRole::CodeGenerator.allowed_tools());
    let turn = match gateway.complete(&transcript, &tools) {
        Ok(t) => t,
        Err(GatewayError::Protocol { turn, .. }) if turn.validate().is_ok() => *turn,
        Err(e) => return TaskRun::fail(e, transcript),
    };
    transcript.push(turn.clone());
    let raw = raw_tree_of(&turn);
    TaskRun {
        result: Ok(raw),
        transcript,
    }
}

/// `json_string` of a `save_json` call, else the turn text.
fn raw_tree_of(turn: &ChatTurn) -> String {
    for call in &turn.tool_calls {
        if call.name != crate::runtime_tools::SAVE_JSON {
            continue;
        }
        let args = match call.parsed_arguments() {
            Ok(a) => Some(a),
            Err(_) => {
                let (fixed, _) = repair_json(&call.arguments);
                serde_json::from_str::<serde_json::Map<String, Value>>(&fixed).ok()
            }
        };
        match args.as_ref().and_then(|a| a.get("json_string")) {
            Some(Value::String(s)) => return s.clone(),
            Some(v @ Value::Object(_)) => return v.to_string(),
            _ => return call.arguments.clone(),
        }
    }
    turn.content.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanedTree {
    pub tree: FileTree,
    pub report: RepairReport,
    /// Gateway round-trips used.
    pub llm_attempts: usize,
}

fn is_path_error(e: &TreeError) -> bool {
    matches!(e, TreeError::UnsafePath { .. } | TreeError::FileDirConflict { .. })
}

/// Deterministic repair first, then at most `llm_attempts` requests to the
/// json_cleaner role. Unsafe paths are not sent back to the model.
pub fn json_cleaner_run(gateway: &Gateway, raw: &str, llm_attempts: usize) -> TaskRun<CleanedTree> {
    let (repaired, report) = repair_json(raw);
    let mut error = match parse_filetree(&repaired) {
        Ok(tree) => {
            return TaskRun {
                result: Ok(CleanedTree {
                    tree,
                    report,
                    llm_attempts: 0,
                }),
                transcript: Vec::new(),
            }
        }
        Err(e) => e,
    };
    if is_path_error(&error) {
        return TaskRun::fail(AgentError::Rejected(error.to_string()), Vec::new());
    }

    let system = match render_system_prompt(AgentRole::JsonCleaner, &GenerationDirectives::default(), &BTreeMap::new()) {
        Ok(s) => s,
        Err(e) => return TaskRun::fail(e, Vec::new()),
    };
    let mut candidate = repaired;
    let mut transcript = Vec::new();
    for attempt in 1..=llm_attempts {
        transcript = vec![
            ChatTurn::system(system.clone()),
            ChatTurn::user(format!(
                "Parser error: {error}\n\nText to repair:\n{candidate}"
            )),
        ];
        let turn = match gateway.complete(&transcript, &[]) {
            Ok(t) => t,
            Err(e) => return TaskRun::fail(e, transcript),
        };
        transcript.push(turn.clone());
        let (fixed, report) = repair_json(&turn.content);
        match parse_filetree(&fixed) {
            Ok(tree) => {
                return TaskRun {
                    result: Ok(CleanedTree {
                        tree,
                        report,
                        llm_attempts: attempt,
                    }),
                    transcript,
                }
            }
            Err(e) if is_path_error(&e) => {
                return TaskRun::fail(AgentError::Rejected(e.to_string()), transcript);
            }
            Err(e) => {
                error = e;
                candidate = fixed;
            }
        }
    }
    TaskRun::fail(
        AgentError::Cleaner {
            message: error.to_string(),
            last_candidate: candidate,
            attempts: llm_attempts,
        },
        transcript,
    )
}

/// Ask the fixer for changed files; the result is the model's tree, to be
/// merged over `tree` by the caller.
pub fn code_fixer_run(
    gateway: &Gateway,
    tree: &FileTree,
    issue: &str,
    directives: &GenerationDirectives,
    llm_attempts: usize,
) -> TaskRun<FileTree> {
    let system = match render_system_prompt(AgentRole::CodeFixer, directives, &BTreeMap::new()) {
        Ok(s) => s,
        Err(e) => return TaskRun::fail(e, Vec::new()),
    };
    let mut transcript = vec![
        ChatTurn::system(system),
        ChatTurn::user(format!(
            "Current code:\n{}\n\nIssue:\n{issue}",
            tree.to_json()
        )),
    ];
    let registry = ToolRegistry::standard();
    let tools = registry.schemas_for(AgentRole::CodeFixer.allowed_tools());
    let turn = match gateway.complete(&transcript, &tools) {
        Ok(t) => t,
        Err(GatewayError::Protocol { turn, .. }) if turn.validate().is_ok() => *turn,
        Err(e) => return TaskRun::fail(e, transcript),
    };
    transcript.push(turn.clone());
    let cleaned = json_cleaner_run(gateway, &raw_tree_of(&turn), llm_attempts);
    match cleaned.result {
        Ok(c) => TaskRun {
            result: Ok(c.tree.with_root_label(tree.root_label.clone())),
            transcript,
        },
        Err(e) => TaskRun::fail(e, transcript),
    }
}

/// One user message to the code tester.
pub fn code_tester_step(
    gateway: &Gateway,
    registry: &ToolRegistry,
    env: &ToolEnv<'_>,
    arts: &mut Artifacts,
    transcript: &mut Vec<ChatTurn>,
    user_message: &str,
    max_rounds: usize,
) -> Result<StepOutcome, GatewayError> {
    transactional(transcript, |t| {
        t.push(ChatTurn::user(user_message));
        tool_loop(AgentRole::CodeTester, gateway, registry, env, arts, t, max_rounds, ToolChoice::Auto)
    })
}
