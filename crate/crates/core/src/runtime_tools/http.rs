use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{self, Read, Write};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProbeRequest {
    pub method: String,
    pub url: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

impl HttpProbeRequest {
    pub fn new(method: impl Into<String>, url: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            url: url.into(),
            headers: BTreeMap::new(),
            body: None,
        }
    }

    pub fn with_json_body(mut self, body: impl Into<String>) -> Self {
        self.headers
            .insert("content-type".into(), "application/json".into());
        self.body = Some(body.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProbeResponse {
    pub status: u16,
    /// Lower-cased names.
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    pub body: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportErrorKind {
    NotAllowed,
    InvalidRequest,
    ConnectionRefused,
    Timeout,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?}: {message}")]
pub struct TransportError {
    pub kind: TransportErrorKind,
    pub message: String,
}

impl TransportError {
    pub fn new(kind: TransportErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

/// Sends one request; `elapsed_ms` is filled in by the caller.
pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpProbeRequest) -> Result<HttpProbeResponse, TransportError>;
}

/// Resolve `url` against the service base and check that it targets the
/// same host and port.
pub fn resolve_allowed(url: &str, base_url: &str) -> Result<Url, TransportError> {
    let base = Url::parse(base_url)
        .map_err(|e| TransportError::new(TransportErrorKind::InvalidRequest, format!("bad service url: {e}")))?;
    let target = Url::options()
        .base_url(Some(&base))
        .parse(url)
        .map_err(|e| TransportError::new(TransportErrorKind::InvalidRequest, format!("bad url {url}: {e}")))?;
    let same = target.scheme() == base.scheme()
        && target.host_str().map(str::to_ascii_lowercase) == base.host_str().map(str::to_ascii_lowercase)
        && target.port_or_known_default() == base.port_or_known_default();
    if !same {
        return Err(TransportError::new(
            TransportErrorKind::NotAllowed,
            format!(
                "{} is not the service endpoint {}",
                endpoint_of(&target),
                endpoint_of(&base)
            ),
        ));
    }
    Ok(target)
}

fn endpoint_of(u: &Url) -> String {
    format!(
        "{}:{}",
        u.host_str().unwrap_or_default(),
        u.port_or_known_default().unwrap_or_default()
    )
}

/// Blocking HTTP over ureq.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

fn read_response(r: ureq::Response) -> Result<HttpProbeResponse, TransportError> {
    let status = r.status();
    let mut headers = BTreeMap::new();
    for name in r.headers_names() {
        if let Some(v) = r.header(&name) {
            headers.insert(name.to_ascii_lowercase(), v.to_owned());
        }
    }
    let mut body = Vec::new();
    r.into_reader()
        .take(16 * 1024 * 1024)
        .read_to_end(&mut body)
        .map_err(|e| TransportError::new(TransportErrorKind::Other, format!("reading body: {e}")))?;
    Ok(HttpProbeResponse {
        status,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
        elapsed_ms: 0,
    })
}

impl HttpTransport for UreqTransport {
    fn send(&self, request: &HttpProbeRequest) -> Result<HttpProbeResponse, TransportError> {
        let mut req = self.agent.request(&request.method.to_ascii_uppercase(), &request.url);
        for (k, v) in &request.headers {
            req = req.set(k, v);
        }
        let result = match &request.body {
            Some(body) => req.send_string(body),
            None => req.call(),
        };
        match result {
            Ok(r) | Err(ureq::Error::Status(_, r)) => read_response(r),
            Err(ureq::Error::Transport(t)) => {
                let text = t.to_string();
                let kind = match t.kind() {
                    ureq::ErrorKind::ConnectionFailed => TransportErrorKind::ConnectionRefused,
                    ureq::ErrorKind::Io if text.contains("timed out") => TransportErrorKind::Timeout,
                    ureq::ErrorKind::InvalidUrl | ureq::ErrorKind::UnknownScheme => {
                        TransportErrorKind::InvalidRequest
                    }
                    _ => TransportErrorKind::Other,
                };
                Err(TransportError::new(kind, text))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub at: DateTime<Utc>,
    pub request: HttpProbeRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<HttpProbeResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TransportError>,
}

pub fn append_journal(workspace: &Path, record: &JournalRecord) -> io::Result<()> {
    let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(workspace.join(JOURNAL_FILE))?;
    f.write_all(line.as_bytes())
}

pub fn read_journal(workspace: &Path) -> io::Result<Vec<JournalRecord>> {
    let text = match std::fs::read_to_string(workspace.join(JOURNAL_FILE)) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allow_list() {
        let base = "http://localhost:3000";
        assert_eq!(
            resolve_allowed("/products", base).unwrap().as_str(),
            "http://localhost:3000/products"
        );
        assert!(resolve_allowed("http://LOCALHOST:3000/products/1", base).is_ok());
        for bad in [
            "http://localhost:3001/products",
            "http://example.com/products",
            "https://localhost:3000/",
            "http://169.254.169.254/latest/meta-data",
        ] {
            let e = resolve_allowed(bad, base).unwrap_err();
            assert_eq!(e.kind, TransportErrorKind::NotAllowed, "{bad}");
        }
    }
}
