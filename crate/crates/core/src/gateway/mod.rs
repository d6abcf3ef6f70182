//! Chat-completion access with function calling.
//!
//! Three interchangeable backends sit behind [`Gateway`]: a live
//! OpenAI-compatible endpoint, a cassette replayer keyed by request
//! fingerprint, and a scripted mock. The gateway validates every returned
//! tool call against the tools that were offered before anyone downstream
//! sees it.

mod cassette;
mod live;
mod scripted;
mod types;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{cassette_path, load_cassette, record_cassette, Cassette, CassetteEntry, ReplayBackend};
pub use live::LiveBackend;
pub use scripted::ScriptedBackend;
pub use types::{validate_transcript, ChatTurn, Role, ToolCall, ToolChoice, ToolSchema};


/// Hex SHA-256 digest identifying one chat request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Everything a backend needs to answer one completion.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model_id: &'a str,
    pub messages: &'a [ChatTurn],
    pub tools: &'a [ToolSchema],
    pub tool_choice: ToolChoice,
    pub temperature: f64,
}

impl ChatRequest<'_> {
    pub fn fingerprint(&self) -> Fingerprint {
        let mut body = json!({
            "model": self.model_id,
            "messages": self.messages,
            "tools": self.tools.iter().map(ToolSchema::to_wire).collect::<Vec<_>>(),
        });
        if let ToolChoice::Function(name) = &self.tool_choice {
            body["tool_choice"] = json!(name);
        }
        let bytes = serde_json::to_vec(&body).expect("request serializes");
        Fingerprint(hex::encode(Sha256::digest(bytes)))
    }
}

/// Stable digest of (transcript, tools, model_id).
pub fn fingerprint_request(transcript: &[ChatTurn], tools: &[ToolSchema], model_id: &str) -> Fingerprint {
    ChatRequest {
        model_id,
        messages: transcript,
        tools,
        tool_choice: ToolChoice::Auto,
        temperature: 0.0,
    }
    .fingerprint()
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport failure for request {fingerprint}: {message}")]
    Transport {
        fingerprint: Fingerprint,
        message: String,
    },
    #[error("endpoint returned HTTP {status} for request {fingerprint}: {body}")]
    Endpoint {
        fingerprint: Fingerprint,
        status: u16,
        body: String,
    },
    #[error("no cassette entry for request {fingerprint}")]
    CassetteMiss { fingerprint: Fingerprint },
    #[error("scripted backend has no response left for request {fingerprint}")]
    ScriptExhausted { fingerprint: Fingerprint },
    #[error("protocol violation in response to {fingerprint}: {}", .violations.join("; "))]
    Protocol {
        fingerprint: Fingerprint,
        /// The offending turn, so callers can feed errors back to the model.
        turn: Box<ChatTurn>,
        violations: Vec<String>,
    },
    #[error("cassette: {0}")]
    Cassette(String),
}

impl GatewayError {
    pub fn fingerprint(&self) -> Option<&Fingerprint> {
        match self {
            GatewayError::Transport { fingerprint, .. }
            | GatewayError::Endpoint { fingerprint, .. }
            | GatewayError::CassetteMiss { fingerprint }
            | GatewayError::ScriptExhausted { fingerprint }
            | GatewayError::Protocol { fingerprint, .. } => Some(fingerprint),
            _ => None,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn respond(&self, request: &ChatRequest<'_>, fingerprint: &Fingerprint) -> Result<ChatTurn, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub mode: BackendMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette_path: Option<PathBuf>,
    /// JSON-lines file of assistant turns served in order (scripted only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout() -> u64 {
    120
}

pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

impl BackendConfig {
    pub fn live(endpoint_url: impl Into<String>, model_id: impl Into<String>, api_key_source: impl Into<String>) -> Self {
        Self {
            mode: BackendMode::Live,
            endpoint_url: Some(endpoint_url.into()),
            model_id: model_id.into(),
            api_key_source: Some(api_key_source.into()),
            cassette_path: None,
            script_path: None,
            request_timeout_secs: default_timeout(),
            temperature: 0.0,
        }
    }

    pub fn replay(cassette_path: impl Into<PathBuf>, model_id: impl Into<String>) -> Self {
        Self {
            mode: BackendMode::Replay,
            cassette_path: Some(cassette_path.into()),
            ..Self::scripted(model_id)
        }
    }

    pub fn scripted(model_id: impl Into<String>) -> Self {
        Self {
            mode: BackendMode::Scripted,
            endpoint_url: None,
            model_id: model_id.into(),
            api_key_source: None,
            cassette_path: None,
            script_path: None,
            request_timeout_secs: default_timeout(),
            temperature: 0.0,
        }
    }

    /// Mode-specific fields must be present exactly when the mode needs them.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let err = |m: &str| Err(GatewayError::Config(m.to_owned()));
        if self.model_id.is_empty() {
            return err("model_id is empty");
        }
        if self.request_timeout_secs == 0 {
            return err("request_timeout_secs must be at least 1");
        }
        let live = self.mode == BackendMode::Live;
        let replay = self.mode == BackendMode::Replay;
        let scripted = self.mode == BackendMode::Scripted;
        if self.endpoint_url.is_some() != live {
            return err("endpoint_url is required for live mode and only for live mode");
        }
        if self.api_key_source.is_some() != live {
            return err("api_key_source is required for live mode and only for live mode");
        }
        if self.cassette_path.is_some() != replay {
            return err("cassette_path is required for replay mode and only for replay mode");
        }
        if self.script_path.is_some() && !scripted {
            return err("script_path is only valid in scripted mode");
        }
        Ok(())
    }
}

/// Uniform chat-completion entry point. Immutable after construction and
/// shareable across threads.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    model_id: String,
    temperature: f64,
    calls: AtomicUsize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("model_id", &self.model_id)
            .field("calls", &self.calls())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, model_id: impl Into<String>) -> Self {
        Self {
            backend,
            model_id: model_id.into(),
            temperature: 0.0,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn scripted(turns: Vec<ChatTurn>) -> Self {
        Self::new(Arc::new(ScriptedBackend::new(turns)), DEFAULT_MODEL)
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn ChatBackend> = match config.mode {
            BackendMode::Live => Arc::new(LiveBackend::from_config(config)?),
            BackendMode::Replay => {
                let path = config.cassette_path.as_ref().expect("validated");
                Arc::new(ReplayBackend::new(load_cassette(path)?))
            }
            BackendMode::Scripted => match &config.script_path {
                Some(path) => Arc::new(ScriptedBackend::from_file(path)?),
                None => Arc::new(ScriptedBackend::new(Vec::new())),
            },
        };
        let mut gw = Gateway::new(backend, config.model_id.clone());
        gw.temperature = config.temperature;
        Ok(gw)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Number of completions requested so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, transcript: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, GatewayError> {
        self.complete_with(transcript, tools, ToolChoice::Auto)
    }

    pub fn complete_with(
        &self,
        transcript: &[ChatTurn],
        tools: &[ToolSchema],
        tool_choice: ToolChoice,
    ) -> Result<ChatTurn, GatewayError> {
        match transcript.first() {
            None => return Err(GatewayError::InvalidTranscript("transcript is empty".into())),
            Some(t) if t.role != Role::System => {
                return Err(GatewayError::InvalidTranscript(
                    "first turn must be a system turn".into(),
                ))
            }
            _ => {}
        }
        validate_transcript(transcript).map_err(GatewayError::InvalidTranscript)?;

        let request = ChatRequest {
            model_id: &self.model_id,
            messages: transcript,
            tools,
            tool_choice,
            temperature: self.temperature,
        };
        let fingerprint = request.fingerprint();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let turn = self.backend.respond(&request, &fingerprint)?;

        let violations = check_response(&turn, tools);
        if violations.is_empty() {
            Ok(turn)
        } else {
            Err(GatewayError::Protocol {
                fingerprint,
                turn: Box::new(turn),
                violations,
            })
        }
    }
}

/// Protocol checks on an assistant response against the offered tools.
pub fn check_response(turn: &ChatTurn, tools: &[ToolSchema]) -> Vec<String> {
    let mut violations = Vec::new();
    if turn.role != Role::Assistant {
        violations.push(format!("expected an assistant turn, got {:?}", turn.role));
    }
    if let Err(e) = turn.validate() {
        violations.push(e);
    }
    for call in &turn.tool_calls {
        let Some(schema) = tools.iter().find(|t| t.name == call.name) else {
            violations.push(format!("tool \"{}\" was not offered", call.name));
            continue;
        };
        match call.parsed_arguments() {
            Ok(args) => violations.extend(
                schema
                    .check_arguments(&args)
                    .into_iter()
                    .map(|p| format!("{}: {p}", call.name)),
            ),
            Err(e) => violations.push(e),
        }
    }
    violations
}

/// Wraps another backend and keeps every (fingerprint, response) pair it
/// serves, for writing a cassette afterwards.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    log: Mutex<Vec<(Fingerprint, ChatTurn)>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<(Fingerprint, ChatTurn)> {
        self.log.lock().expect("recording log poisoned").clone()
    }
}

impl ChatBackend for RecordingBackend {
    fn respond(&self, request: &ChatRequest<'_>, fingerprint: &Fingerprint) -> Result<ChatTurn, GatewayError> {
        let turn = self.inner.respond(request, fingerprint)?;
        self.log
            .lock()
            .expect("recording log poisoned")
            .push((fingerprint.clone(), turn.clone()));
        Ok(turn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tools() -> Vec<ToolSchema> {
        vec![ToolSchema {
            name: "save_openapi_spec".into(),
            description: "save".into(),
            parameters: json!({
                "type": "object",
                "properties": {"spec": {"type": "string"}},
                "required": ["spec"]
            }),
        }]
    }

    fn transcript() -> Vec<ChatTurn> {
        vec![ChatTurn::system("sys"), ChatTurn::user("hello")]
    }

    #[test]
    fn rejects_bad_transcripts() {
        let gw = Gateway::scripted(vec![ChatTurn::assistant("x")]);
        assert!(matches!(gw.complete(&[], &[]), Err(GatewayError::InvalidTranscript(_))));
        assert!(matches!(
            gw.complete(&[ChatTurn::user("x")], &[]),
            Err(GatewayError::InvalidTranscript(_))
        ));
        assert_eq!(gw.calls(), 0);
    }

    #[test]
    fn plain_reply_without_tools() {
        let gw = Gateway::scripted(vec![ChatTurn::assistant("hi")]);
        let t = gw.complete(&transcript(), &[]).unwrap();
        assert!(t.tool_calls.is_empty());
        assert_eq!(gw.calls(), 1);
    }

    #[test]
    fn unoffered_tool_is_protocol_error() {
        let call = ToolCall::new("c1", "save_openapi_spec", json!({"spec": "x"}));
        let gw = Gateway::scripted(vec![ChatTurn::assistant_calls("", vec![call])]);
        let err = gw.complete(&transcript(), &[]).unwrap_err();
        match err {
            GatewayError::Protocol { violations, turn, .. } => {
                assert_eq!(violations, vec!["tool \"save_openapi_spec\" was not offered"]);
                assert_eq!(turn.tool_calls.len(), 1);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn malformed_arguments_are_protocol_error() {
        let mut call = ToolCall::new("c1", "save_openapi_spec", json!({}));
        call.arguments = "{not json".into();
        let gw = Gateway::scripted(vec![
            ChatTurn::assistant_calls("", vec![call]),
            ChatTurn::assistant_calls("", vec![ToolCall::new("c2", "save_openapi_spec", json!({"spec": 3}))]),
        ]);
        assert!(matches!(gw.complete(&transcript(), &tools()), Err(GatewayError::Protocol { .. })));
        let err = gw.complete(&transcript(), &tools()).unwrap_err();
        assert!(err.to_string().contains("should be string"), "{err}");
        assert!(err.fingerprint().is_some());
    }

    #[test]
    fn valid_tool_call_passes() {
        let call = ToolCall::new("c1", "save_openapi_spec", json!({"spec": "openapi: 3.0.0"}));
        let gw = Gateway::scripted(vec![ChatTurn::assistant_calls("", vec![call])]);
        let t = gw.complete(&transcript(), &tools()).unwrap();
        assert_eq!(t.tool_calls[0].name, "save_openapi_spec");
    }

    #[test]
    fn fingerprint_properties() {
        let a = fingerprint_request(&transcript(), &tools(), "m");
        assert_eq!(a, fingerprint_request(&transcript(), &tools(), "m"));
        assert_ne!(a, fingerprint_request(&transcript(), &tools(), "m2"));
        assert_ne!(a, fingerprint_request(&transcript(), &[], "m"));
        assert_ne!(
            fingerprint_request(&[], &[], "m"),
            fingerprint_request(&[ChatTurn::system("")], &[], "m")
        );
        assert_eq!(a.0.len(), 64);
    }

    #[test]
    fn config_mode_fields() {
        assert!(BackendConfig::scripted("m").validate().is_ok());
        assert!(BackendConfig::replay("c.jsonl", "m").validate().is_ok());
        assert!(BackendConfig::live(DEFAULT_ENDPOINT, "m", "KEY").validate().is_ok());
        let mut bad = BackendConfig::scripted("m");
        bad.cassette_path = Some("x".into());
        assert!(bad.validate().is_err());
        let mut bad = BackendConfig::live(DEFAULT_ENDPOINT, "m", "KEY");
        bad.api_key_source = None;
        assert!(bad.validate().is_err());
        let mut bad = BackendConfig::replay("c", "m");
        bad.endpoint_url = Some("http://x".into());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn recording_backend_captures() {
        let rec = Arc::new(RecordingBackend::new(Arc::new(ScriptedBackend::new(vec![
            ChatTurn::assistant("one"),
        ]))));
        let gw = Gateway::new(rec.clone(), "m");
        gw.complete(&transcript(), &[]).unwrap();
        let ex = rec.exchanges();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].0, fingerprint_request(&transcript(), &[], "m"));
    }
}
