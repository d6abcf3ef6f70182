//! Terminal client. Every subcommand except `serve` goes through the session
//! service HTTP API.
//!
//! Exit codes: 0 success, 1 operation failed, 2 usage or invalid request,
//! 3 service unreachable, 4 unknown session or missing artifact, 5 wrong
//! phase or conflict.

mod client;
mod render;

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use client::{
    exit_code_for_status, Client, ClientError, EXIT_CONFLICT, EXIT_FAILED, EXIT_NOT_FOUND, EXIT_OK, EXIT_UNREACHABLE,
    EXIT_USAGE,
};
pub use render::{event_line, events_text};

use crate::gateway::{BackendConfig, BackendMode, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT, DEFAULT_MODEL};
use crate::probe::ProbeReport;
use crate::session::service::{AppState, DEFAULT_BIND};
use crate::session::{SessionConfig, SystemRuntime};

pub const DEFAULT_SESSION_FILE: &str = ".specforge-session";
pub const DEFAULT_SERVICE_URL: &str = "http://127.0.0.1:8700";

#[derive(Debug, Parser)]
#[command(name = "specforge", version, about = "Drive API-first service generation sessions")]
pub struct Cli {
    /// Session service base URL.
    #[arg(long, global = true, env = "SPECFORGE_SERVICE_URL", default_value = DEFAULT_SERVICE_URL)]
    pub service_url: String,
    /// Session id; defaults to the id in the workspace's session file.
    #[arg(long, global = true)]
    pub session: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Directory holding the default-session file.
    #[arg(long, global = true, default_value = ".")]
    pub workspace: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Live,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Model backend for new sessions.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Cassette file for the replay backend.
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    /// JSON-lines script of assistant turns for the scripted backend.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    #[arg(long, global = true, default_value = DEFAULT_MODEL)]
    pub model: String,
    #[arg(long, global = true, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Environment variable the service reads the API key from.
    #[arg(long, global = true, env = "SPECFORGE_API_KEY_ENV", default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
}

impl BackendArgs {
    fn config(&self) -> Result<Option<BackendConfig>, String> {
        let kind = match (self.backend, &self.cassette, &self.script) {
            (Some(k), _, _) => k,
            (None, Some(_), _) => BackendKind::Replay,
            (None, None, Some(_)) => BackendKind::Scripted,
            (None, None, None) => return Ok(None),
        };
        let abs = |p: &PathBuf| std::path::absolute(p).unwrap_or_else(|_| p.clone());
        let mut cfg = match kind {
            BackendKind::Live => BackendConfig::live(&self.endpoint, &self.model, &self.api_key_env),
            BackendKind::Replay => {
                let path = self.cassette.as_ref().ok_or("--backend replay needs --cassette")?;
                BackendConfig::replay(abs(path), &self.model)
            }
            BackendKind::Scripted => BackendConfig::scripted(&self.model),
        };
        if let Some(script) = &self.script {
            if cfg.mode != BackendMode::Scripted {
                return Err("--script only applies to the scripted backend".into());
            }
            cfg.script_path = Some(abs(script));
        }
        Ok(Some(cfg))
    }
}

#[derive(Debug, Clone, Args)]
pub struct NewArgs {
    /// Explicit session id.
    #[arg(long)]
    pub id: Option<String>,
    /// Base URL of the generated service, used for probes.
    #[arg(long)]
    pub service_base_url: Option<String>,
    #[arg(long)]
    pub max_fix_iterations: Option<u32>,
    #[arg(long)]
    pub max_tool_rounds: Option<u32>,
    /// Run fix iterations without waiting for confirmation.
    #[arg(long)]
    pub auto_continue: bool,
    /// JSON file with a full session config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the session service.
    Serve {
        #[arg(long, env = "SPECFORGE_BIND", default_value = DEFAULT_BIND)]
        bind: String,
        /// Directory holding one workspace per session.
        #[arg(long, env = "SPECFORGE_ROOT", default_value = "specforge-sessions")]
        root: PathBuf,
    },
    /// Create a session and make it the default.
    New(NewArgs),
    /// Interactive conversation with the session.
    Chat {
        /// Also write the rendered conversation to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Create a session and feed it a scripted conversation.
    Replay {
        /// Lines to send. Lines starting with `/` run actions:
        /// /finalize, /generate, /run, /status, /probe, /fix <issue>.
        input: PathBuf,
        #[command(flatten)]
        new: NewArgs,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Save the latest specification draft.
    Finalize,
    /// Generate server code from the finalized specification.
    Generate,
    /// Build and start the containers.
    Run,
    /// Container status.
    Status,
    /// Recent container logs with error summaries.
    Logs {
        #[arg(long, default_value_t = 200)]
        tail: usize,
    },
    /// Probe the running service against its specification.
    Probe,
    /// Start a fix episode for ISSUE, or continue the open one.
    Fix { issue: Option<String> },
    /// Session state and event log as JSON.
    Export {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Close the session.
    Close,
}

/// Output sinks, so tests can capture them.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parse `args` and run. Returns the process exit code.
pub fn run_with<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                io.stderr.write_all(text.as_bytes())
            } else {
                io.stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    execute(&cli, io)
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let mut io = Io {
        stdin: &mut stdin,
        stdout: &mut stdout,
        stderr: &mut stderr,
    };
    run_with(std::env::args_os(), &mut io)
}

fn fail(cli: &Cli, io: &mut Io<'_>, err: &ClientError) -> i32 {
    if cli.json {
        let _ = writeln!(io.stdout, "{}", err.to_json());
    } else {
        let _ = writeln!(io.stderr, "error: {}", err.message);
        if err.exit_code == EXIT_CONFLICT {
            if let Some(allowed) = err.body["detail"]["allowed"].as_array() {
                let names: Vec<&str> = allowed.iter().filter_map(Value::as_str).collect();
                let _ = writeln!(io.stderr, "hint: this action is available in phase(s): {}", names.join(", "));
            }
        }
    }
    err.exit_code
}

fn usage(cli: &Cli, io: &mut Io<'_>, message: impl Into<String>) -> i32 {
    let err = ClientError {
        exit_code: EXIT_USAGE,
        code: "usage".into(),
        message: message.into(),
        body: Value::Null,
    };
    fail(cli, io, &err)
}

fn session_file(workspace: &Path) -> PathBuf {
    workspace.join(DEFAULT_SESSION_FILE)
}

fn resolve_session(cli: &Cli) -> Result<String, String> {
    if let Some(id) = &cli.session {
        return Ok(id.clone());
    }
    let path = session_file(&cli.workspace);
    match fs::read_to_string(&path) {
        Ok(text) if !text.trim().is_empty() => Ok(text.trim().to_owned()),
        _ => Err(format!(
            "no session given: pass --session or run `specforge new` (looked for {})",
            path.display()
        )),
    }
}

fn print_json(io: &mut Io<'_>, v: &Value) {
    let _ = writeln!(io.stdout, "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn execute(cli: &Cli, io: &mut Io<'_>) -> i32 {
    match &cli.command {
        Command::Serve { bind, root } => return serve(bind, root, io),
        Command::New(args) => return new_session(cli, args, io).map_or_else(|c| c, |_| EXIT_OK),
        Command::Replay { input, new, transcript } => return replay(cli, input, new, transcript.as_deref(), io),
        _ => {}
    }
    let id = match resolve_session(cli) {
        Ok(id) => id,
        Err(m) => return usage(cli, io, m),
    };
    let client = Client::new(&cli.service_url);
    let base = format!("/sessions/{id}");
    match &cli.command {
        Command::Chat { transcript } => chat(cli, &client, &id, transcript.as_deref(), io),
        Command::Finalize => action(cli, &client, &format!("{base}/finalize"), json!({}), io),
        Command::Generate => action(cli, &client, &format!("{base}/generate"), json!({}), io),
        Command::Run => action(cli, &client, &format!("{base}/run"), json!({}), io),
        Command::Close => action(cli, &client, &format!("{base}/close"), json!({}), io),
        Command::Fix { issue } => action(cli, &client, &format!("{base}/fix"), json!({"issue": issue}), io),
        Command::Probe => probe(cli, &client, &base, io),
        Command::Status => match client.get(&format!("{base}/status")) {
            Ok(body) => {
                let v = body.json();
                if cli.json {
                    print_json(io, &v);
                } else {
                    let rows = v.as_array().cloned().unwrap_or_default();
                    let _ = write!(io.stdout, "{}", render::status_table(&rows));
                }
                EXIT_OK
            }
            Err(e) => fail(cli, io, &e),
        },
        Command::Logs { tail } => match client.get(&format!("{base}/logs?tail={tail}")) {
            Ok(body) => {
                let v = body.json();
                if cli.json {
                    print_json(io, &v);
                } else {
                    if let Some(services) = v["logs"]["per_service"].as_object() {
                        for (name, lines) in services {
                            for l in lines.as_array().into_iter().flatten() {
                                let _ = writeln!(io.stdout, "{name} | {}", l["text"].as_str().unwrap_or(""));
                            }
                        }
                    }
                    let summaries = v["error_summaries"].as_array().cloned().unwrap_or_default();
                    if !summaries.is_empty() {
                        let _ = write!(io.stdout, "\nerrors:\n{}", render::summaries_text(&summaries));
                    }
                }
                EXIT_OK
            }
            Err(e) => fail(cli, io, &e),
        },
        Command::Export { output } => match client.get(&format!("{base}/export")) {
            Ok(body) => {
                let text = serde_json::to_string_pretty(&body.json()).expect("json") + "\n";
                match output {
                    Some(path) => match fs::write(path, &text) {
                        Ok(()) => EXIT_OK,
                        Err(e) => usage(cli, io, format!("cannot write {}: {e}", path.display())),
                    },
                    None => {
                        let _ = io.stdout.write_all(text.as_bytes());
                        EXIT_OK
                    }
                }
            }
            Err(e) => fail(cli, io, &e),
        },
        Command::Serve { .. } | Command::New(_) | Command::Replay { .. } => unreachable!("handled above"),
    }
}

fn serve(bind: &str, root: &Path, io: &mut Io<'_>) -> i32 {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            return EXIT_FAILED;
        }
    };
    let app = AppState::new(root, Arc::new(SystemRuntime));
    let result = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        crate::session::service::serve(listener, app).await
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            EXIT_FAILED
        }
    }
}

fn session_config(cli: &Cli, args: &NewArgs) -> Result<SessionConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => SessionConfig::default(),
    };
    if let Some(b) = cli.backend.config()? {
        cfg.backend = b;
    }
    if let Some(u) = &args.service_base_url {
        cfg.service_base_url = u.clone();
    }
    if let Some(n) = args.max_fix_iterations {
        cfg.max_fix_iterations = n;
    }
    if let Some(n) = args.max_tool_rounds {
        cfg.max_tool_rounds = n;
    }
    cfg.auto_continue |= args.auto_continue;
    Ok(cfg)
}

/// Create a session and write the default-session file. Err carries the
/// exit code after the error was reported.
fn new_session(cli: &Cli, args: &NewArgs, io: &mut Io<'_>) -> Result<String, i32> {
    let cfg = session_config(cli, args).map_err(|m| usage(cli, io, m))?;
    let client = Client::new(&cli.service_url);
    let body = client
        .post("/sessions", json!({"id": args.id, "config": cfg}))
        .map_err(|e| fail(cli, io, &e))?
        .json();
    let id = body["session_id"].as_str().unwrap_or_default().to_owned();
    if let Err(e) = fs::write(session_file(&cli.workspace), format!("{id}\n")) {
        let _ = writeln!(io.stderr, "warning: cannot write default-session file: {e}");
    }
    if matches!(cli.command, Command::New(_)) {
        if cli.json {
            print_json(io, &body);
        } else {
            let _ = writeln!(io.stdout, "{id}");
        }
    }
    Ok(id)
}

fn action(cli: &Cli, client: &Client, path: &str, body: Value, io: &mut Io<'_>) -> i32 {
    match client.post(path, body) {
        Ok(b) => {
            let v = b.json();
            if cli.json {
                print_json(io, &v);
            } else {
                let events = v["events"].as_array().cloned().unwrap_or_default();
                let _ = write!(io.stdout, "{}", events_text(&events));
                if v["result"]["awaiting_continuation"] == json!(true) {
                    let _ = writeln!(io.stdout, "(not resolved yet; run `specforge fix` to continue)");
                }
                let _ = writeln!(io.stdout, "phase: {}", v["phase"].as_str().unwrap_or("?"));
            }
            if v["ok"] == json!(true) {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => fail(cli, io, &e),
    }
}

fn probe(cli: &Cli, client: &Client, base: &str, io: &mut Io<'_>) -> i32 {
    match client.post(&format!("{base}/probe"), json!({})) {
        Ok(b) => {
            let v = b.json();
            if cli.json {
                print_json(io, &v);
            } else {
                match serde_json::from_value::<ProbeReport>(v["result"]["report"].clone()) {
                    Ok(report) => {
                        let _ = write!(io.stdout, "{}", report.render_table());
                    }
                    Err(_) => {
                        let events = v["events"].as_array().cloned().unwrap_or_default();
                        let _ = write!(io.stdout, "{}", events_text(&events));
                    }
                }
            }
            if v["ok"] == json!(true) {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => fail(cli, io, &e),
    }
}

/// Post one chat line and render the events it produced. The service
/// returns the new events with the response, so no separate stream read is
/// needed between turns.
fn send_line(
    cli: &Cli,
    client: &Client,
    id: &str,
    line: &str,
    out: &mut String,
    io: &mut Io<'_>,
) -> Result<bool, i32> {
    let base = format!("/sessions/{id}");
    let (path, body) = match line.strip_prefix('/') {
        Some(cmd) => {
            let (name, rest) = cmd.split_once(' ').unwrap_or((cmd, ""));
            match name {
                "finalize" | "generate" | "run" | "probe" | "close" => (format!("{base}/{name}"), json!({})),
                "fix" => (
                    format!("{base}/fix"),
                    json!({"issue": if rest.trim().is_empty() { Value::Null } else { json!(rest.trim()) }}),
                ),
                "status" => {
                    return match client.get(&format!("{base}/status")) {
                        Ok(b) => {
                            let rows = b.json().as_array().cloned().unwrap_or_default();
                            out.push_str(&render::status_table(&rows));
                            Ok(true)
                        }
                        Err(e) => {
                            out.push_str(&format!("error: {}\n", e.message));
                            Ok(false)
                        }
                    }
                }
                _ => {
                    out.push_str(&format!("error: unknown action /{name}\n"));
                    return Ok(false);
                }
            }
        }
        None => (format!("{base}/messages"), json!({"text": line})),
    };
    match client.post(&path, body) {
        Ok(b) => {
            let v = b.json();
            let events = v["events"].as_array().cloned().unwrap_or_default();
            out.push_str(&events_text(&events));
            Ok(v["ok"] == json!(true))
        }
        Err(e) if e.exit_code == EXIT_UNREACHABLE || e.exit_code == EXIT_NOT_FOUND && e.code == "unknown_session" => {
            Err(fail(cli, io, &e))
        }
        Err(e) => {
            out.push_str(&format!("error: {}\n", e.message));
            Ok(false)
        }
    }
}

fn chat(cli: &Cli, client: &Client, id: &str, transcript: Option<&Path>, io: &mut Io<'_>) -> i32 {
    if let Err(e) = client.get(&format!("/sessions/{id}")) {
        return fail(cli, io, &e);
    }
    let mut log = String::new();
    loop {
        let _ = write!(io.stdout, "> ");
        let _ = io.stdout.flush();
        let mut line = String::new();
        match io.stdin.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let line = line.trim_end_matches(['\n', '\r']);
        if matches!(line.trim(), "quit" | "exit") {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut out = String::new();
        if let Err(code) = send_line(cli, client, id, line, &mut out, io) {
            return code;
        }
        let _ = io.stdout.write_all(out.as_bytes());
        log.push_str(&out);
    }
    let _ = writeln!(io.stdout);
    write_transcript(cli, transcript, &log, io)
}

fn write_transcript(cli: &Cli, path: Option<&Path>, text: &str, io: &mut Io<'_>) -> i32 {
    if let Some(p) = path {
        if let Err(e) = fs::write(p, text) {
            return usage(cli, io, format!("cannot write {}: {e}", p.display()));
        }
    }
    EXIT_OK
}

fn replay(cli: &Cli, input: &Path, new: &NewArgs, transcript: Option<&Path>, io: &mut Io<'_>) -> i32 {
    let script = match fs::read_to_string(input) {
        Ok(s) => s,
        Err(e) => return usage(cli, io, format!("cannot read {}: {e}", input.display())),
    };
    let id = match new_session(cli, new, io) {
        Ok(id) => id,
        Err(code) => return code,
    };
    let client = Client::new(&cli.service_url);
    let mut log = String::new();
    let mut all_ok = true;
    for line in script.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        match send_line(cli, &client, &id, line, &mut log, io) {
            Ok(ok) => all_ok &= ok,
            Err(code) => return code,
        }
    }
    if cli.json {
        print_json(io, &json!({"session_id": id, "ok": all_ok, "transcript": log}));
    } else {
        let _ = io.stdout.write_all(log.as_bytes());
    }
    match write_transcript(cli, transcript, &log, io) {
        EXIT_OK if all_ok => EXIT_OK,
        EXIT_OK => EXIT_FAILED,
        other => other,
    }
}
