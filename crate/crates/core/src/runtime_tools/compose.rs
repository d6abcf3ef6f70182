//! Parsing of compose status listings and log output.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_LOG_TAIL: usize = 200;

pub fn up_args() -> Vec<String> {
    ["compose", "up", "--build", "-d"].map(String::from).to_vec()
}

pub fn ps_args() -> Vec<String> {
    ["compose", "ps", "--all", "--format", "json"].map(String::from).to_vec()
}

pub fn logs_args(tail: usize) -> Vec<String> {
    let mut args: Vec<String> = ["compose", "logs", "--no-color", "--timestamps", "--tail"]
        .map(String::from)
        .to_vec();
    args.push(tail.to_string());
    args
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceState {
    Running,
    Exited,
    Restarting,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceStatus {
    pub service_name: String,
    pub state: ServiceState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    /// (host_port, container_port)
    #[serde(default)]
    pub ports: Vec<(u16, u16)>,
}

/// Parse `compose ps --format json` output, which is a JSON array in some
/// engine versions and one object per line in others.
pub fn parse_status(output: &str) -> Result<Vec<ServiceStatus>, String> {
    let trimmed = output.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| format!("status output is not JSON: {e}"))?
    } else {
        trimmed
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| format!("status line is not JSON: {e}")))
            .collect::<Result<_, _>>()?
    };
    let mut out: Vec<ServiceStatus> = rows.iter().map(status_row).collect();
    out.sort_by(|a, b| a.service_name.cmp(&b.service_name));
    Ok(out)
}

fn status_row(row: &Value) -> ServiceStatus {
    let text = |k: &str| row.get(k).and_then(Value::as_str).unwrap_or_default();
    let service_name = match text("Service") {
        "" => text("Name").to_owned(),
        s => s.to_owned(),
    };
    let raw_state = text("State").to_ascii_lowercase();
    let state = match raw_state.as_str() {
        "running" => ServiceState::Running,
        "exited" | "dead" => ServiceState::Exited,
        "restarting" => ServiceState::Restarting,
        _ => ServiceState::Unknown,
    };
    let exit_code = (state == ServiceState::Exited).then(|| {
        row.get("ExitCode")
            .and_then(Value::as_i64)
            .and_then(|c| i32::try_from(c).ok())
            .unwrap_or(-1)
    });
    let mut ports = Vec::new();
    for p in row.get("Publishers").and_then(Value::as_array).into_iter().flatten() {
        let port = |k: &str| p.get(k).and_then(Value::as_u64).and_then(|v| u16::try_from(v).ok());
        if let (Some(host), Some(target)) = (port("PublishedPort"), port("TargetPort")) {
            if host != 0 && !ports.contains(&(host, target)) {
                ports.push((host, target));
            }
        }
    }
    ServiceStatus {
        service_name,
        state,
        exit_code,
        ports,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogStream {
    Stdout,
    Stderr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    pub stream: LogStream,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogBundle {
    pub per_service: BTreeMap<String, Vec<LogLine>>,
    pub tail_limit: usize,
}

impl LogBundle {
    pub fn is_empty(&self) -> bool {
        self.per_service.values().all(Vec::is_empty)
    }

    pub fn line_count(&self) -> usize {
        self.per_service.values().map(Vec::len).sum()
    }

    /// The last `n` lines of every service, rendered `service | text`.
    pub fn raw_tail(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        for (service, lines) in &self.per_service {
            let skip = lines.len().saturating_sub(n);
            out.extend(lines[skip..].iter().map(|l| format!("{service} | {}", l.text)));
        }
        out
    }
}

/// `web-1` and `web_1` both name the service `web`.
fn service_of(container: &str) -> &str {
    let trimmed = container.trim();
    match trimmed.rfind(['-', '_']) {
        Some(i) if i > 0 && trimmed[i + 1..].chars().all(|c| c.is_ascii_digit()) && i + 1 < trimmed.len() => {
            &trimmed[..i]
        }
        _ => trimmed,
    }
}

fn parse_line(line: &str, stream: LogStream) -> Option<(String, LogLine)> {
    let (container, rest) = line.split_once('|')?;
    let rest = rest.strip_prefix(' ').unwrap_or(rest);
    let (timestamp, text) = match rest.split_once(' ') {
        Some((ts, text)) => match DateTime::parse_from_rfc3339(ts) {
            Ok(t) => (Some(t.with_timezone(&Utc)), text),
            Err(_) => (None, rest),
        },
        None => match DateTime::parse_from_rfc3339(rest) {
            Ok(t) => (Some(t.with_timezone(&Utc)), ""),
            Err(_) => (None, rest),
        },
    };
    Some((
        service_of(container).to_owned(),
        LogLine {
            timestamp,
            stream,
            text: text.trim_end_matches('\r').to_owned(),
        },
    ))
}

/// Parse `compose logs --timestamps` output into per-service lines, each
/// service chronological and cut to its last `tail` lines.
pub fn parse_logs(stdout: &str, stderr: &str, tail: usize) -> LogBundle {
    let mut per_service: BTreeMap<String, Vec<LogLine>> = BTreeMap::new();
    for (text, stream) in [(stdout, LogStream::Stdout), (stderr, LogStream::Stderr)] {
        for line in text.lines() {
            if let Some((service, l)) = parse_line(line, stream) {
                per_service.entry(service).or_default().push(l);
            }
        }
    }
    for lines in per_service.values_mut() {
        // Stable, so lines sharing a timestamp keep their output order.
        lines.sort_by_key(|l| l.timestamp);
        let skip = lines.len().saturating_sub(tail);
        lines.drain(..skip);
    }
    per_service.retain(|_, v| !v.is_empty());
    LogBundle {
        per_service,
        tail_limit: tail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_array_and_ndjson() {
        let arr = r#"[{"Name":"p-api-1","Service":"api","State":"running","ExitCode":0,
            "Publishers":[{"URL":"0.0.0.0","TargetPort":3000,"PublishedPort":3000,"Protocol":"tcp"},
                          {"URL":"::","TargetPort":3000,"PublishedPort":3000,"Protocol":"tcp"}]}]"#;
        let s = parse_status(arr).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].state, ServiceState::Running);
        assert_eq!(s[0].ports, vec![(3000, 3000)]);
        assert_eq!(s[0].exit_code, None);

        let nd = "{\"Service\":\"db\",\"State\":\"exited\",\"ExitCode\":137,\"Publishers\":[]}\n";
        let s = parse_status(nd).unwrap();
        assert_eq!((s[0].state, s[0].exit_code), (ServiceState::Exited, Some(137)));
        assert!(parse_status("").unwrap().is_empty());
        assert!(parse_status("[]").unwrap().is_empty());
        assert!(parse_status("NAME  IMAGE").is_err());
    }

    #[test]
    fn service_names() {
        assert_eq!(service_of("api-1"), "api");
        assert_eq!(service_of("api_12"), "api");
        assert_eq!(service_of("my-api"), "my-api");
        assert_eq!(service_of("api-"), "api-");
    }

    #[test]
    fn log_line_shapes() {
        let b = parse_logs(
            "api-1  | 2024-05-01T10:00:00.000000000Z Server listening on 3000\nnot a log line\n",
            "api-1  | 2024-05-01T09:59:59.000000000Z warn\n",
            DEFAULT_LOG_TAIL,
        );
        let lines = &b.per_service["api"];
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].stream, LogStream::Stderr);
        assert_eq!(lines[1].text, "Server listening on 3000");
    }
}
