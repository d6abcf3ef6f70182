//! The function-calling tool registry and its executors.
//!
//! Every executor returns a [`ToolResult`]; failures are data for the model,
//! never panics or errors past the registry.

mod compose;
mod errors;
pub mod fake;
mod http;
mod runner;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agents::{self, GenerationDirectives};
use crate::clock::Clock;
use crate::codetree::{
    self, load_snapshot, materialize, merge_update, parse_filetree, repair_json, validate_tree,
    write_snapshot, FileTree, TreeVersion, COMPOSE_FILE_NAMES,
};
use crate::finding::{has_errors, Finding};
use crate::gateway::{ChatTurn, Gateway, ToolSchema};
use crate::spec_engine::{save_spec, SpecVersion};

pub use compose::{
    logs_args, parse_logs, parse_status, ps_args, up_args, LogBundle, LogLine, LogStream, ServiceState,
    ServiceStatus, DEFAULT_LOG_TAIL,
};
pub use errors::{classify_line, extract_errors, render_summaries, ErrorCategory, ErrorSummary};
pub use fake::FakeRunner;
pub use http::{
    append_journal, read_journal, resolve_allowed, HttpProbeRequest, HttpProbeResponse, HttpTransport,
    JournalRecord, TransportError, TransportErrorKind, UreqTransport, JOURNAL_FILE,
};
pub use runner::{
    check_command, run_checked, CommandOutput, CommandSpec, ProcessRunner, RunnerError, SystemRunner,
    DEFAULT_ENGINE, PROGRAM_ALLOW_LIST,
};

pub const SAVE_OPENAPI_SPEC: &str = "save_openapi_spec";
pub const SAVE_JSON: &str = "save_json";
pub const RUN_DOCKER_COMPOSE: &str = "run_docker_compose";
pub const CHECK_DOCKER_COMPOSE_STATUS: &str = "check_docker_compose_status";
pub const GET_DOCKER_COMPOSE_LOGS: &str = "get_docker_compose_logs";
pub const RUN_CURL_COMMAND: &str = "run_curl_command";
pub const UPDATE_JSON: &str = "update_json";

/// Registry order.
pub const TOOL_NAMES: [&str; 7] = [
    SAVE_OPENAPI_SPEC,
    SAVE_JSON,
    RUN_DOCKER_COMPOSE,
    CHECK_DOCKER_COMPOSE_STATUS,
    GET_DOCKER_COMPOSE_LOGS,
    RUN_CURL_COMMAND,
    UPDATE_JSON,
];

/// Lines of command output kept in launch reports.
pub const OUTPUT_TAIL_LINES: usize = 20;
/// Raw log lines per service passed to the model next to the summaries.
pub const RAW_LOG_TAIL_FOR_MODEL: usize = 30;
/// Response bodies longer than this are cut in tool results.
pub const MAX_BODY_FOR_MODEL: usize = 4000;

/// What a tool needs from the session, borrowed for one execution.
pub struct ToolEnv<'a> {
    pub workspace: &'a Path,
    pub root_label: &'a str,
    pub engine: &'a str,
    pub runner: &'a dyn ProcessRunner,
    pub transport: &'a dyn HttpTransport,
    pub gateway: &'a Gateway,
    pub clock: &'a dyn Clock,
    pub directives: &'a GenerationDirectives,
    pub service_base_url: &'a str,
    pub command_timeout: Duration,
    pub llm_repair_attempts: usize,
}

impl ToolEnv<'_> {
    pub fn code_dir(&self) -> PathBuf {
        self.workspace.join(self.root_label)
    }

    fn command(&self, args: Vec<String>) -> CommandSpec {
        let dir = self.code_dir();
        CommandSpec {
            program: self.engine.to_owned(),
            args,
            working_dir: if dir.is_dir() { dir } else { self.workspace.to_path_buf() },
            timeout: self.command_timeout,
        }
    }
}

/// Session artifacts that tools read and update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(default)]
    pub spec_versions: Vec<SpecVersion>,
    #[serde(default)]
    pub tree_versions: Vec<TreeVersion>,
    /// Code generator output before cleaning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_raw_tree: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_logs: Option<LogBundle>,
    #[serde(default)]
    pub last_errors: Vec<ErrorSummary>,
    #[serde(default)]
    pub last_status: Vec<ServiceStatus>,
    /// Last run of each task-scoped agent role.
    #[serde(default)]
    pub task_transcripts: BTreeMap<String, Vec<ChatTurn>>,
}

/// Side effects the session reacts to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideEffect {
    SpecSaved { version: SpecVersion },
    TreeSaved { version: TreeVersion },
    TreeUpdated { version: TreeVersion, changed_paths: Vec<String> },
    ComposeLaunched { success: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    /// Always a JSON object.
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<SideEffect>,
}

impl ToolResult {
    pub fn success(payload: Value) -> Self {
        Self {
            ok: true,
            payload,
            effect: None,
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            ok: false,
            payload: json!({ "error": message.into() }),
            effect: None,
        }
    }

    pub fn failure_with(message: impl Into<String>, findings: &[Finding]) -> Self {
        Self {
            ok: false,
            payload: json!({ "error": message.into(), "findings": findings }),
            effect: None,
        }
    }

    fn with_effect(mut self, effect: SideEffect) -> Self {
        self.effect = Some(effect);
        self
    }

    /// Text of the tool turn handed back to the model.
    pub fn to_content(&self) -> String {
        let mut obj = Map::new();
        obj.insert("ok".into(), Value::Bool(self.ok));
        if let Value::Object(p) = &self.payload {
            obj.extend(p.clone());
        } else {
            obj.insert("result".into(), self.payload.clone());
        }
        Value::Object(obj).to_string()
    }
}

type Executor = fn(&ToolEnv<'_>, &mut Artifacts, &Map<String, Value>) -> ToolResult;

pub struct RegisteredTool {
    pub schema: ToolSchema,
    executor: Executor,
}

pub struct ToolRegistry {
    tools: Vec<RegisteredTool>,
}

fn schema(name: &str, description: &str, properties: Value, required: &[&str]) -> ToolSchema {
    ToolSchema {
        name: name.to_owned(),
        description: description.to_owned(),
        parameters: json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        }),
    }
}

impl ToolRegistry {
    /// The seven tools.
    pub fn standard() -> Self {
        let tools = vec![
            RegisteredTool {
                schema: schema(
                    SAVE_OPENAPI_SPEC,
                    "Validate an OpenAPI specification and save it as YAML in the workspace. Returns the saved version or the validation findings.",
                    json!({"spec": {"type": "string", "description": "Complete OpenAPI 3 document, YAML or JSON"}}),
                    &["spec"],
                ),
                executor: exec_save_openapi_spec,
            },
            RegisteredTool {
                schema: schema(
                    SAVE_JSON,
                    "Repair and validate a JSON object mapping file paths to file contents, then write it as the server code.",
                    json!({"json_string": {"type": "string", "description": "JSON object: relative file path -> file content"}}),
                    &["json_string"],
                ),
                executor: exec_save_json,
            },
            RegisteredTool {
                schema: schema(
                    RUN_DOCKER_COMPOSE,
                    "Build and start the services with docker compose, detached.",
                    json!({}),
                    &[],
                ),
                executor: exec_run_docker_compose,
            },
            RegisteredTool {
                schema: schema(
                    CHECK_DOCKER_COMPOSE_STATUS,
                    "List the compose services with their state, exit code and published ports.",
                    json!({}),
                    &[],
                ),
                executor: exec_check_status,
            },
            RegisteredTool {
                schema: schema(
                    GET_DOCKER_COMPOSE_LOGS,
                    "Fetch recent container logs with extracted error summaries.",
                    json!({"tail": {"type": "integer", "description": "Lines per service, default 200"}}),
                    &[],
                ),
                executor: exec_get_logs,
            },
            RegisteredTool {
                schema: schema(
                    RUN_CURL_COMMAND,
                    "Send an HTTP request to the running service and return status, headers and body.",
                    json!({
                        "method": {"type": "string", "enum": ["GET", "POST", "PUT", "PATCH", "DELETE"]},
                        "url": {"type": "string", "description": "Absolute URL or path on the service"},
                        "headers": {"type": "object"},
                        "body": {"type": "string"}
                    }),
                    &["method", "url"],
                ),
                executor: exec_run_curl,
            },
            RegisteredTool {
                schema: schema(
                    UPDATE_JSON,
                    "Have the code fixer change the server code for an issue, then save and rewrite it.",
                    json!({"issue": {"type": "string", "description": "What is wrong and what to change"}}),
                    &["issue"],
                ),
                executor: exec_update_json,
            },
        ];
        Self { tools }
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.schema.name.as_str()).collect()
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        self.tools.iter().map(|t| t.schema.clone()).collect()
    }

    pub fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.schema.name == name).map(|t| &t.schema)
    }

    /// Schemas for `names`, in the order given; unknown names are skipped.
    pub fn schemas_for(&self, names: &[&str]) -> Vec<ToolSchema> {
        names.iter().filter_map(|n| self.schema(n).cloned()).collect()
    }

    /// Execute `name` with JSON `arguments`. Unknown tools, unparseable or
    /// non-conforming arguments become failure results.
    pub fn dispatch(&self, env: &ToolEnv<'_>, artifacts: &mut Artifacts, name: &str, arguments: &str) -> ToolResult {
        let Some(tool) = self.tools.iter().find(|t| t.schema.name == name) else {
            return ToolResult::failure(format!("unknown tool \"{name}\""));
        };
        let args = match serde_json::from_str::<Value>(if arguments.trim().is_empty() { "{}" } else { arguments }) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return ToolResult::failure("arguments must be a JSON object"),
            Err(e) => return ToolResult::failure(format!("arguments are not valid JSON: {e}")),
        };
        let problems = tool.schema.check_arguments(&args);
        if !problems.is_empty() {
            return ToolResult::failure(format!("invalid arguments: {}", problems.join("; ")));
        }
        (tool.executor)(env, artifacts, &args)
    }
}

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or_default()
}

fn exec_save_openapi_spec(env: &ToolEnv<'_>, arts: &mut Artifacts, args: &Map<String, Value>) -> ToolResult {
    save_openapi_spec(env, arts, str_arg(args, "spec"))
}

/// Validate and save a spec version.
pub fn save_openapi_spec(env: &ToolEnv<'_>, arts: &mut Artifacts, text: &str) -> ToolResult {
    match save_spec(text, env.workspace, &mut arts.spec_versions, env.clock.now()) {
        Ok((version, warnings)) => ToolResult::success(json!({
            "version_index": version.version_index,
            "file": version.file_path,
            "digest": version.digest,
            "warnings": warnings,
        }))
        .with_effect(SideEffect::SpecSaved { version }),
        Err(e) => ToolResult::failure_with(e.to_string(), e.findings()),
    }
}

fn exec_save_json(env: &ToolEnv<'_>, arts: &mut Artifacts, args: &Map<String, Value>) -> ToolResult {
    save_json(env, arts, str_arg(args, "json_string"))
}

fn write_tree(env: &ToolEnv<'_>, tree: &FileTree) -> Result<codetree::WriteReport, String> {
    let dir = env.code_dir();
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    materialize(tree, &dir).map_err(|e| e.to_string())
}

/// Repair, parse, validate and materialize a file tree, then snapshot it.
pub fn save_json(env: &ToolEnv<'_>, arts: &mut Artifacts, raw: &str) -> ToolResult {
    if arts.spec_versions.is_empty() {
        return ToolResult::failure("no specification has been saved yet");
    }
    let (repaired, report) = repair_json(raw);
    let tree = match parse_filetree(&repaired) {
        Ok(t) => t.with_root_label(env.root_label),
        Err(e) => return ToolResult::failure(e.to_string()),
    };
    let findings = validate_tree(&tree, env.directives);
    if has_errors(&findings) {
        return ToolResult::failure_with("file tree rejected", &findings);
    }
    let written = match write_tree(env, &tree) {
        Ok(w) => w,
        Err(e) => return ToolResult::failure(e),
    };
    let version = match write_snapshot(env.workspace, &tree, &arts.tree_versions, env.clock.now()) {
        Ok(v) => v,
        Err(e) => return ToolResult::failure(format!("cannot write snapshot: {e}")),
    };
    arts.tree_versions.push(version.clone());
    ToolResult::success(json!({
        "version_index": version.version_index,
        "file_count": tree.len(),
        "files_written": written.files_written,
        "bytes_written": written.bytes_written,
        "skipped_identical": written.skipped_identical,
        "repair": {"changed": report.changed, "rules_applied": report.rules_applied},
    }))
    .with_effect(SideEffect::TreeSaved { version })
}

fn exec_update_json(env: &ToolEnv<'_>, arts: &mut Artifacts, args: &Map<String, Value>) -> ToolResult {
    update_json(env, arts, str_arg(args, "issue"))
}

/// Run the code fixer on the current tree and persist the merged result.
pub fn update_json(env: &ToolEnv<'_>, arts: &mut Artifacts, issue: &str) -> ToolResult {
    let Some(current) = arts.tree_versions.last() else {
        return ToolResult::failure("no server code has been saved yet");
    };
    let base = match load_snapshot(env.workspace, current, env.root_label) {
        Ok(t) => t,
        Err(e) => return ToolResult::failure(format!("cannot load current code: {e}")),
    };
    let mut full_issue = issue.trim().to_owned();
    if !arts.last_errors.is_empty() {
        full_issue.push_str("\n\nErrors from the latest logs:\n");
        full_issue.push_str(&render_summaries(&arts.last_errors));
    }
    let run = agents::code_fixer_run(env.gateway, &base, &full_issue, env.directives, env.llm_repair_attempts);
    arts.task_transcripts
        .insert(agents::AgentRole::CodeFixer.name().to_owned(), run.transcript);
    let patch = match run.result {
        Ok(t) => t,
        Err(e) => return ToolResult::failure(format!("code fixer failed: {e}")),
    };
    let merged = match merge_update(&base, &patch, &[]) {
        Ok(t) => t,
        Err(e) => return ToolResult::failure(e.to_string()),
    };
    let findings = validate_tree(&merged, env.directives);
    if has_errors(&findings) {
        return ToolResult::failure_with("fixed code rejected", &findings);
    }
    let changed = base.changed_paths(&merged);
    if changed.is_empty() {
        return ToolResult::success(json!({"changed_paths": [], "message": "no changes"}));
    }
    if let Err(e) = write_tree(env, &merged) {
        return ToolResult::failure(e);
    }
    let version = match write_snapshot(env.workspace, &merged, &arts.tree_versions, env.clock.now()) {
        Ok(v) => v,
        Err(e) => return ToolResult::failure(format!("cannot write snapshot: {e}")),
    };
    arts.tree_versions.push(version.clone());
    ToolResult::success(json!({
        "changed_paths": changed,
        "version_index": version.version_index,
    }))
    .with_effect(SideEffect::TreeUpdated {
        version,
        changed_paths: changed,
    })
}

fn tail_lines(text: &str, n: usize) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn exec_run_docker_compose(env: &ToolEnv<'_>, arts: &mut Artifacts, _: &Map<String, Value>) -> ToolResult {
    run_docker_compose(env, arts)
}

/// `compose up --build -d` in the code directory.
pub fn run_docker_compose(env: &ToolEnv<'_>, _arts: &mut Artifacts) -> ToolResult {
    let dir = env.code_dir();
    if !COMPOSE_FILE_NAMES.iter().any(|n| dir.join(n).is_file()) {
        return ToolResult::failure(format!("no compose file in {}", env.root_label));
    }
    let output = match run_checked(env.runner, &env.command(up_args()), env.workspace) {
        Ok(o) => o,
        Err(e) => return ToolResult::failure(e.to_string()),
    };
    let success = output.success();
    let mut tail = tail_lines(&output.stdout, OUTPUT_TAIL_LINES);
    tail.extend(tail_lines(&output.stderr, OUTPUT_TAIL_LINES));
    let payload = json!({
        "success": success,
        "exit_code": output.exit_code,
        "timed_out": output.timed_out,
        "output_tail": tail,
    });
    ToolResult {
        ok: success,
        payload,
        effect: Some(SideEffect::ComposeLaunched { success }),
    }
}

fn exec_check_status(env: &ToolEnv<'_>, arts: &mut Artifacts, _: &Map<String, Value>) -> ToolResult {
    match check_docker_compose_status(env, arts) {
        Ok(s) => ToolResult::success(json!({ "services": s })),
        Err(e) => ToolResult::failure(e),
    }
}

pub fn check_docker_compose_status(env: &ToolEnv<'_>, arts: &mut Artifacts) -> Result<Vec<ServiceStatus>, String> {
    let output = run_checked(env.runner, &env.command(ps_args()), env.workspace).map_err(|e| e.to_string())?;
    if !output.success() {
        return Err(format!(
            "status command failed ({}): {}",
            output.exit_code.map_or("killed".to_owned(), |c| c.to_string()),
            output.stderr.trim()
        ));
    }
    let status = parse_status(&output.stdout)?;
    arts.last_status = status.clone();
    Ok(status)
}

fn exec_get_logs(env: &ToolEnv<'_>, arts: &mut Artifacts, args: &Map<String, Value>) -> ToolResult {
    let tail = args
        .get("tail")
        .and_then(Value::as_u64)
        .map_or(DEFAULT_LOG_TAIL, |t| t.clamp(1, 10_000) as usize);
    match get_docker_compose_logs(env, arts, tail) {
        Ok(bundle) => ToolResult::success(json!({
            "line_counts": bundle.per_service.iter().map(|(k, v)| (k.clone(), v.len())).collect::<BTreeMap<_, _>>(),
            "error_summaries": arts.last_errors.iter().map(|s| json!({
                "service": s.service,
                "category": s.category,
                "evidence": s.evidence_lines.iter().map(|l| l.text.clone()).collect::<Vec<_>>(),
                "hint": s.hint,
            })).collect::<Vec<_>>(),
            "raw_tail": bundle.raw_tail(RAW_LOG_TAIL_FOR_MODEL),
        })),
        Err(e) => ToolResult::failure(e),
    }
}

/// Fetch logs, extract errors and cache both on the artifacts.
pub fn get_docker_compose_logs(env: &ToolEnv<'_>, arts: &mut Artifacts, tail: usize) -> Result<LogBundle, String> {
    let output = run_checked(env.runner, &env.command(logs_args(tail)), env.workspace).map_err(|e| e.to_string())?;
    if !output.success() {
        return Err(format!("logs command failed: {}", output.stderr.trim()));
    }
    let bundle = parse_logs(&output.stdout, &output.stderr, tail);
    arts.last_errors = extract_errors(&bundle);
    arts.last_logs = Some(bundle.clone());
    Ok(bundle)
}

fn exec_run_curl(env: &ToolEnv<'_>, _: &mut Artifacts, args: &Map<String, Value>) -> ToolResult {
    let mut request = HttpProbeRequest::new(str_arg(args, "method"), str_arg(args, "url"));
    if let Some(Value::Object(h)) = args.get("headers") {
        for (k, v) in h {
            let v = v.as_str().map_or_else(|| v.to_string(), str::to_owned);
            request.headers.insert(k.to_ascii_lowercase(), v);
        }
    }
    if let Some(body) = args.get("body").and_then(Value::as_str) {
        request.body = Some(body.to_owned());
        request
            .headers
            .entry("content-type".into())
            .or_insert_with(|| "application/json".into());
    }
    match run_curl_command(env, &request) {
        Ok(r) => {
            let mut body = r.body.clone();
            if body.len() > MAX_BODY_FOR_MODEL {
                let cut = (0..=MAX_BODY_FOR_MODEL).rev().find(|i| body.is_char_boundary(*i)).unwrap_or(0);
                body.truncate(cut);
                body.push_str("...");
            }
            ToolResult::success(json!({
                "status": r.status,
                "headers": r.headers,
                "body": body,
                "elapsed_ms": r.elapsed_ms,
            }))
        }
        Err(e) => ToolResult {
            ok: false,
            payload: json!({"error": e.message, "kind": e.kind}),
            effect: None,
        },
    }
}

/// Send one request to the service and journal the exchange.
pub fn run_curl_command(env: &ToolEnv<'_>, request: &HttpProbeRequest) -> Result<HttpProbeResponse, TransportError> {
    let url = resolve_allowed(&request.url, env.service_base_url)?;
    let mut sent = request.clone();
    sent.url = url.to_string();
    sent.method = sent.method.to_ascii_uppercase();
    let started = env.clock.now();
    let result = env.transport.send(&sent);
    let elapsed_ms = (env.clock.now() - started).num_milliseconds().max(0) as u64;
    let result = result.map(|mut r| {
        r.elapsed_ms = elapsed_ms;
        r
    });
    let record = JournalRecord {
        at: started,
        request: sent,
        response: result.as_ref().ok().cloned(),
        error: result.as_ref().err().cloned(),
    };
    if let Err(e) = append_journal(env.workspace, &record) {
        tracing::warn!("probe journal write failed: {e}");
    }
    result
}
