//! Shared fixtures: a product CRUD stub, a scripted model and container
//! engine fakes.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use specforge::clock::{Clock, FixedClock, SteppingClock};
use specforge::gateway::{ChatRequest, ChatTurn, Gateway, Role, ScriptedBackend, ToolCall, ToolChoice};
use specforge::runtime_tools::{
    CommandOutput, FakeRunner, HttpProbeRequest, HttpProbeResponse, HttpTransport, TransportError,
    TransportErrorKind,
};
use specforge::session::{Runtime, SessionConfig, SessionError};

pub const PRODUCT_SPEC: &str = include_str!("../fixtures/product_spec.yml");
pub const BASE_URL: &str = "http://localhost:3000";

// ---------------------------------------------------------------- stub API

#[derive(Default)]
struct StubState {
    next_id: i64,
    items: BTreeMap<i64, Value>,
}

/// Product CRUD behavior shared by the TCP server and the in-memory
/// transport.
#[derive(Default)]
pub struct StubApi {
    state: Mutex<StubState>,
    /// Leave `price` out of create responses.
    pub drop_price: bool,
    pub requests: AtomicUsize,
}

fn product_fields_ok(v: &Value) -> bool {
    v["name"].is_string() && v["price"].is_number() && v["quantity"].is_i64()
}

impl StubApi {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn dropping_price() -> Arc<Self> {
        Arc::new(Self {
            drop_price: true,
            ..Self::default()
        })
    }

    /// (status, JSON body or empty).
    pub fn handle(&self, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut st = self.state.lock().unwrap();
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        let parsed = body.and_then(|b| serde_json::from_str::<Value>(b).ok());
        match (method, segments.as_slice()) {
            ("GET", ["products"]) => (200, Value::Array(st.items.values().cloned().collect()).to_string()),
            ("POST", ["products"]) => match parsed {
                Some(v) if product_fields_ok(&v) => {
                    st.next_id += 1;
                    let id = st.next_id;
                    let mut item = v.as_object().cloned().unwrap_or_default();
                    item.insert("id".into(), json!(id));
                    st.items.insert(id, Value::Object(item.clone()));
                    if self.drop_price {
                        item.remove("price");
                    }
                    (201, Value::Object(item).to_string())
                }
                _ => (400, json!({"error": "invalid product"}).to_string()),
            },
            ("PUT", ["products", id]) => {
                let Some(id) = id.parse::<i64>().ok().filter(|i| st.items.contains_key(i)) else {
                    return (404, json!({"error": "not found"}).to_string());
                };
                match parsed {
                    Some(v) if product_fields_ok(&v) => {
                        let mut item = v.as_object().cloned().unwrap_or_default();
                        item.insert("id".into(), json!(id));
                        st.items.insert(id, Value::Object(item.clone()));
                        (200, Value::Object(item).to_string())
                    }
                    _ => (400, json!({"error": "invalid product"}).to_string()),
                }
            }
            ("DELETE", ["products", id]) => match id.parse::<i64>().ok().and_then(|i| st.items.remove(&i)) {
                Some(_) => (204, String::new()),
                None => (404, json!({"error": "not found"}).to_string()),
            },
            _ => (404, json!({"error": "no route"}).to_string()),
        }
    }
}

/// Serves a [`StubApi`] without sockets.
pub struct StubTransport(pub Arc<StubApi>);

impl HttpTransport for StubTransport {
    fn send(&self, request: &HttpProbeRequest) -> Result<HttpProbeResponse, TransportError> {
        let url = url::Url::parse(&request.url)
            .map_err(|e| TransportError::new(TransportErrorKind::InvalidRequest, e.to_string()))?;
        let (status, body) = self.0.handle(&request.method, url.path(), request.body.as_deref());
        let mut headers = BTreeMap::new();
        if !body.is_empty() {
            headers.insert("content-type".to_owned(), "application/json".to_owned());
        }
        Ok(HttpProbeResponse {
            status,
            headers,
            body,
            elapsed_ms: 0,
        })
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        204 => "No Content",
        400 => "Bad Request",
        _ => "Not Found",
    }
}

fn serve_conn(api: &StubApi, stream: TcpStream) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_owned();
    let path = parts.next().unwrap_or("/").to_owned();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    let (status, out) = api.handle(&method, &path, (!body.is_empty()).then_some(body.as_str()));
    let mut stream = stream;
    let ctype = if out.is_empty() { "" } else { "Content-Type: application/json\r\n" };
    write!(
        stream,
        "HTTP/1.1 {status} {}\r\n{ctype}Content-Length: {}\r\nConnection: close\r\n\r\n{out}",
        reason(status),
        out.len()
    )?;
    stream.flush()
}

/// Serve `api` over HTTP on an ephemeral local port; returns the base URL.
pub fn spawn_stub_server(api: Arc<StubApi>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let api = Arc::clone(&api);
            thread::spawn(move || {
                let _ = serve_conn(&api, stream);
            });
        }
    });
    format!("http://{addr}")
}

// ------------------------------------------------------------ code fixture

pub const FIXED_MARKER: &str = "// fixed";

pub fn product_tree() -> BTreeMap<String, String> {
    BTreeMap::from([
        (
            "docker-compose.yml".to_owned(),
            "services:\n  api:\n    build: .\n    ports:\n      - \"3000:3000\"\n".to_owned(),
        ),
        (
            "Dockerfile".to_owned(),
            "FROM node:18-alpine\nWORKDIR /app\nCOPY package.json .\nRUN npm install\nCOPY . .\nCMD [\"npm\", \"start\"]\n"
                .to_owned(),
        ),
        (
            "package.json".to_owned(),
            "{\n  \"name\": \"product-service\",\n  \"scripts\": {\"start\": \"node server/index.js\"},\n  \"dependencies\": {\"express\": \"^4.18.2\"}\n}\n"
                .to_owned(),
        ),
        (
            "server/index.js".to_owned(),
            "const express = require('express');\nconst app = express();\napp.use(express.json());\napp.use('/products', require('./routes/products'));\napp.listen(process.env.PORT || 3000);\n"
                .to_owned(),
        ),
        (
            "server/routes/products.js".to_owned(),
            "const router = require('express').Router();\nconst items = new Map();\nlet next = 0;\nrouter.get('/', (req, res) => res.json([...items.values()]));\nrouter.post('/', (req, res) => { const p = { id: ++next, ...req.body }; items.set(p.id, p); res.status(201).json(p); });\nmodule.exports = router;\n"
                .to_owned(),
        ),
    ])
}

pub fn product_tree_json() -> String {
    serde_json::to_string(&product_tree()).unwrap()
}

// ------------------------------------------------------------ model script

static FIX_ATTEMPTS: AtomicUsize = AtomicUsize::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixer {
    /// Adds the fixed marker to the entry point.
    Repairs,
    /// Changes a comment every time; never adds the marker.
    NeverHelps,
}

fn last_user(messages: &[ChatTurn]) -> &str {
    messages
        .iter()
        .rev()
        .find(|t| t.role == Role::User)
        .map_or("", |t| t.content.as_str())
}

/// How the script answers a request, given only the request.
pub fn respond(request: &ChatRequest<'_>, fixer: Fixer) -> ChatTurn {
    let messages = request.messages;
    let system = messages.first().map_or("", |t| t.content.as_str());
    let last = messages.last().expect("non-empty transcript");
    let call_id = format!("call-{}", messages.len());
    if system.starts_with("You help a developer design") {
        if last.role == Role::Tool {
            return ChatTurn::assistant("The specification is saved. Ask me for changes at any time.");
        }
        let forced = matches!(request.tool_choice, ToolChoice::Function(_));
        if forced || last_user(messages).to_lowercase().contains("final") {
            return ChatTurn::assistant_calls(
                "",
                vec![ToolCall::new(call_id, "save_openapi_spec", json!({"spec": PRODUCT_SPEC}))],
            );
        }
        return ChatTurn::assistant(format!(
            "Here is a draft for the product service:\n\n```yaml\n{PRODUCT_SPEC}```\n\nWhat should change?"
        ));
    }
    if system.starts_with("You generate the server code") {
        // Wrapped the way models often answer: fenced, with a trailing comma.
        let raw = product_tree_json();
        let sloppy = format!("```json\n{},\n}}\n```", raw.trim_end_matches('}'));
        return ChatTurn::assistant_calls("", vec![ToolCall::new(call_id, "save_json", json!({"json_string": sloppy}))]);
    }
    if system.starts_with("You repair JSON") {
        return ChatTurn::assistant(product_tree_json());
    }
    if system.starts_with("You fix the server code") {
        let user = last_user(messages);
        let entry = product_tree()["server/index.js"].clone();
        let content = match fixer {
            Fixer::Repairs => format!("{entry}{FIXED_MARKER}\n"),
            Fixer::NeverHelps => {
                let n = FIX_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
                format!("{entry}// attempt {n} ({} bytes of issue)\n", user.len())
            }
        };
        let patch = json!({ "server/index.js": content }).to_string();
        return ChatTurn::assistant_calls("", vec![ToolCall::new(call_id, "save_json", json!({"json_string": patch}))]);
    }
    if system.starts_with("You operate a generated") {
        if last.role == Role::Tool {
            return ChatTurn::assistant(format!("Done. Last tool output: {}", last.content.chars().take(200).collect::<String>()));
        }
        let user = last_user(messages).to_lowercase();
        let tool = if user.contains("logs") {
            "get_docker_compose_logs"
        } else if user.contains("status") {
            "check_docker_compose_status"
        } else if user.contains("run") {
            "run_docker_compose"
        } else if user.contains("products") {
            return ChatTurn::assistant_calls(
                "",
                vec![ToolCall::new(call_id, "run_curl_command", json!({"method": "GET", "url": "/products"}))],
            );
        } else {
            return ChatTurn::assistant("Tell me what to check.");
        };
        return ChatTurn::assistant_calls("", vec![ToolCall::new(call_id, tool, json!({}))]);
    }
    ChatTurn::assistant("unrecognized role")
}

pub fn scripted_gateway(fixer: Fixer) -> Gateway {
    Gateway::new(
        Arc::new(ScriptedBackend::from_fn(move |r| respond(r, fixer))),
        specforge::gateway::DEFAULT_MODEL,
    )
}

// --------------------------------------------------------- engine fixtures

pub const PS_RUNNING: &str =
    r#"[{"Service":"api","Name":"product-api-1","State":"running","ExitCode":0,"Publishers":[{"URL":"0.0.0.0","TargetPort":3000,"PublishedPort":3000,"Protocol":"tcp"}]}]"#;
pub const PS_EXITED: &str =
    r#"[{"Service":"api","Name":"product-api-1","State":"exited","ExitCode":1,"Publishers":[]}]"#;
pub const LOGS_CLEAN: &str = "api-1  | 2024-05-01T10:00:00.000000000Z > product-service@1.0.0 start\napi-1  | 2024-05-01T10:00:00.100000000Z Server listening on port 3000\n";
pub const LOGS_BROKEN: &str = "api-1  | 2024-05-01T10:00:00.000000000Z node:internal/modules/cjs/loader:1080\napi-1  | 2024-05-01T10:00:00.000100000Z Error: Cannot find module 'express'\napi-1  | 2024-05-01T10:00:00.000200000Z     at Module._resolveFilename (node:internal/modules/cjs/loader:1077:15)\n";

/// Healthy engine: every launch succeeds, the api runs, logs are clean.
pub fn healthy_runner() -> FakeRunner {
    FakeRunner::new()
        .respond("up", CommandOutput::ok("Container product-api-1  Started\n"))
        .respond("ps", CommandOutput::ok(PS_RUNNING))
        .respond("logs", CommandOutput::ok(LOGS_CLEAN))
}

/// Engine whose service only runs once the entry point carries the fixed
/// marker; the decision reads the materialized file.
pub fn marker_runner() -> FakeRunner {
    FakeRunner::from_fn(|spec, _| {
        let fixed = std::fs::read_to_string(spec.working_dir.join("server/index.js"))
            .map(|c| c.contains(FIXED_MARKER))
            .unwrap_or(false);
        match specforge::runtime_tools::fake::compose_subcommand(&spec.args) {
            "up" => CommandOutput::ok("Container product-api-1  Started\n"),
            "ps" => CommandOutput::ok(if fixed { PS_RUNNING } else { PS_EXITED }),
            "logs" => CommandOutput::ok(if fixed { LOGS_CLEAN } else { LOGS_BROKEN }),
            _ => CommandOutput::ok(""),
        }
    })
}

pub fn fixed_clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::epoch())
}

pub fn stepping_clock() -> Arc<dyn Clock> {
    Arc::new(SteppingClock::new(FixedClock::epoch().now(), 7))
}

/// Runtime factory over the given parts; every session shares them.
pub fn factory(
    gateway: Arc<Gateway>,
    runner: Arc<FakeRunner>,
    transport: Arc<dyn HttpTransport>,
    clock: Arc<dyn Clock>,
) -> impl Fn(&SessionConfig) -> Result<Runtime, SessionError> + Send + Sync {
    move |_cfg: &SessionConfig| {
        Ok(Runtime {
            gateway: Arc::clone(&gateway),
            runner: runner.clone(),
            transport: Arc::clone(&transport),
            clock: Arc::clone(&clock),
        })
    }
}

pub fn default_factory(fixer: Fixer) -> impl Fn(&SessionConfig) -> Result<Runtime, SessionError> + Send + Sync {
    factory(
        Arc::new(scripted_gateway(fixer)),
        Arc::new(healthy_runner()),
        Arc::new(StubTransport(StubApi::new())),
        fixed_clock(),
    )
}

/// Files under `dir` (relative path -> bytes), found by an independent walk.
pub fn walk_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).into_iter().filter_map(Result::ok) {
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir).unwrap();
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
            out.insert(key, std::fs::read(entry.path()).unwrap());
        }
    }
    out
}

/// Run the session service on an ephemeral port in a background runtime.
pub fn spawn_service<F>(root: &Path, factory: F) -> String
where
    F: Fn(&SessionConfig) -> Result<Runtime, SessionError> + Send + Sync + 'static,
{
    let app = specforge::session::service::AppState::new(root.to_path_buf(), Arc::new(factory));
    let (tx, rx) = std::sync::mpsc::channel();
    thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            specforge::session::service::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}
