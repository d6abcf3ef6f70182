use std::io::Read;
use std::time::Duration;

use serde_json::{json, Value};

/// Failure of one service request, already mapped to an exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientError {
    pub exit_code: i32,
    pub code: String,
    pub message: String,
    pub body: Value,
}

impl ClientError {
    pub fn to_json(&self) -> Value {
        let mut v = json!({"error": self.message, "code": self.code, "exit_code": self.exit_code});
        if let Some(detail) = self.body.get("detail") {
            v["detail"] = detail.clone();
        }
        v
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;
pub const EXIT_CONFLICT: i32 = 5;

pub fn exit_code_for_status(status: u16) -> i32 {
    match status {
        404 => EXIT_NOT_FOUND,
        409 => EXIT_CONFLICT,
        400 | 422 => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

/// Blocking JSON client for the session service.
pub struct Client {
    base: String,
    agent: ureq::Agent,
}

/// Body of a successful response.
pub enum Body {
    Json(Value),
    Text(String),
}

impl Body {
    pub fn json(self) -> Value {
        match self {
            Body::Json(v) => v,
            Body::Text(t) => Value::String(t),
        }
    }
}

impl Client {
    pub fn new(base: &str) -> Self {
        // Agent turns can take minutes against a live model.
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout_read(Duration::from_secs(1800))
            .build();
        Self {
            base: base.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub fn get(&self, path: &str) -> Result<Body, ClientError> {
        self.call(self.agent.get(&format!("{}{path}", self.base)), None)
    }

    pub fn post(&self, path: &str, body: Value) -> Result<Body, ClientError> {
        self.call(self.agent.post(&format!("{}{path}", self.base)), Some(body))
    }

    fn call(&self, req: ureq::Request, body: Option<Value>) -> Result<Body, ClientError> {
        let result = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        match result {
            Ok(resp) => read_body(resp).map_err(|m| ClientError {
                exit_code: EXIT_FAILED,
                code: "bad_response".into(),
                message: m,
                body: Value::Null,
            }),
            Err(ureq::Error::Status(status, resp)) => {
                let body = read_body(resp).map(Body::json).unwrap_or(Value::Null);
                let message = body
                    .get("error")
                    .and_then(Value::as_str)
                    .map_or_else(|| format!("service returned HTTP {status}"), str::to_owned);
                let code = body
                    .get("code")
                    .and_then(Value::as_str)
                    .unwrap_or("http_error")
                    .to_owned();
                Err(ClientError {
                    exit_code: exit_code_for_status(status),
                    code,
                    message,
                    body,
                })
            }
            Err(e) => Err(ClientError {
                exit_code: EXIT_UNREACHABLE,
                code: "unreachable".into(),
                message: format!("cannot reach the session service at {}: {e}", self.base),
                body: Value::Null,
            }),
        }
    }
}

fn read_body(resp: ureq::Response) -> Result<Body, String> {
    let json = resp.content_type() == "application/json";
    let mut text = String::new();
    resp.into_reader()
        .take(256 * 1024 * 1024)
        .read_to_string(&mut text)
        .map_err(|e| e.to_string())?;
    if json {
        serde_json::from_str(&text).map(Body::Json).map_err(|e| e.to_string())
    } else {
        Ok(Body::Text(text))
    }
}
