use std::env;
use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, ChatRequest, ChatTurn, Fingerprint, GatewayError, ToolChoice, ToolSchema};

/// OpenAI-compatible chat-completions endpoint over HTTPS.
pub struct LiveBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl LiveBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            endpoint: endpoint.into(),
            api_key: api_key.into(),
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| GatewayError::Config("endpoint_url missing".into()))?;
        let var = config
            .api_key_source
            .as_deref()
            .ok_or_else(|| GatewayError::Config("api_key_source missing".into()))?;
        let api_key = env::var(var)
            .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?;
        Ok(Self::new(
            endpoint,
            api_key,
            Duration::from_secs(config.request_timeout_secs),
        ))
    }
}

pub(crate) fn request_body(request: &ChatRequest<'_>) -> Value {
    let mut body = json!({
        "model": request.model_id,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if !request.tools.is_empty() {
        body["tools"] = Value::Array(request.tools.iter().map(ToolSchema::to_wire).collect());
        body["tool_choice"] = match &request.tool_choice {
            ToolChoice::Auto => json!("auto"),
            ToolChoice::Function(name) => json!({"type": "function", "function": {"name": name}}),
        };
    }
    body
}

impl ChatBackend for LiveBackend {
    fn respond(&self, request: &ChatRequest<'_>, fingerprint: &Fingerprint) -> Result<ChatTurn, GatewayError> {
        let body = request_body(request);
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                return Err(GatewayError::Endpoint {
                    fingerprint: fingerprint.clone(),
                    status,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(e) => {
                return Err(GatewayError::Transport {
                    fingerprint: fingerprint.clone(),
                    message: e.to_string(),
                })
            }
        };
        let text = response.into_string().map_err(|e| GatewayError::Transport {
            fingerprint: fingerprint.clone(),
            message: e.to_string(),
        })?;
        parse_completion(&text).map_err(|message| GatewayError::Protocol {
            fingerprint: fingerprint.clone(),
            turn: Box::new(ChatTurn::assistant(text.clone())),
            violations: vec![message],
        })
    }
}

fn parse_completion(text: &str) -> Result<ChatTurn, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("response is not JSON: {e}"))?;
    let message = value
        .pointer("/choices/0/message")
        .ok_or("response has no choices[0].message")?;
    serde_json::from_value(message.clone()).map_err(|e| format!("malformed message: {e}"))
}
