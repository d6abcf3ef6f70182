use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::compose::{LogBundle, LogLine};

/// Evidence lines kept per summary.
pub const MAX_EVIDENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    StartupFailure,
    UnhandledException,
    PortConflict,
    DependencyMissing,
    Http5xx,
    Other,
}

impl ErrorCategory {
    fn hint(self) -> &'static str {
        match self {
            ErrorCategory::StartupFailure => "the service did not start; check the start command and configuration",
            ErrorCategory::UnhandledException => "an exception escaped a handler; check the code at the top of the trace",
            ErrorCategory::PortConflict => "the port is already in use; change the published port or stop the other process",
            ErrorCategory::DependencyMissing => "a module is missing; add it to the dependencies or fix the import path",
            ErrorCategory::Http5xx => "requests fail with a server error; check the handler for that route",
            ErrorCategory::Other => "an error was logged; read the evidence lines",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub service: String,
    pub category: ErrorCategory,
    pub evidence_lines: Vec<LogLine>,
    pub hint: String,
}

struct Patterns {
    port: Regex,
    dependency: Regex,
    http_5xx: Regex,
    startup: Regex,
    exception: Regex,
    other: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        port: Regex::new(r"EADDRINUSE|address already in use|port is already allocated").unwrap(),
        dependency: Regex::new(
            r"Cannot find module|MODULE_NOT_FOUND|ModuleNotFoundError|No module named|ERR_MODULE_NOT_FOUND|could not resolve dependency",
        )
        .unwrap(),
        http_5xx: Regex::new(r#"\b(GET|POST|PUT|PATCH|DELETE|HEAD|OPTIONS)\b[^\n]*?["\s]5\d\d\b"#).unwrap(),
        startup: Regex::new(
            r"exited with code [1-9]|npm ERR!|failed to start|[Aa]pplication startup failed|Error: listen|command not found|exec format error",
        )
        .unwrap(),
        exception: Regex::new(
            r"^\s*(Uncaught\s+)?[A-Z][A-Za-z]*(Error|Exception)\b:|UnhandledPromiseRejection|Traceback \(most recent call last\)|panicked at|^\s*throw\s",
        )
        .unwrap(),
        other: Regex::new(r#"\b(ERROR|FATAL|CRITICAL)\b|"level"\s*:\s*"(error|fatal)""#).unwrap(),
    })
}

/// Category of one log line, by priority; `None` for ordinary lines.
pub fn classify_line(text: &str) -> Option<ErrorCategory> {
    let p = patterns();
    if p.port.is_match(text) {
        Some(ErrorCategory::PortConflict)
    } else if p.dependency.is_match(text) {
        Some(ErrorCategory::DependencyMissing)
    } else if p.http_5xx.is_match(text) {
        Some(ErrorCategory::Http5xx)
    } else if p.startup.is_match(text) {
        Some(ErrorCategory::StartupFailure)
    } else if p.exception.is_match(text) {
        Some(ErrorCategory::UnhandledException)
    } else if p.other.is_match(text) {
        Some(ErrorCategory::Other)
    } else {
        None
    }
}

/// Categorized summaries, one per (service, category). A module-not-found
/// trace is reported once as a missing dependency rather than also as an
/// exception.
pub fn extract_errors(bundle: &LogBundle) -> Vec<ErrorSummary> {
    let mut out = Vec::new();
    for (service, lines) in &bundle.per_service {
        let mut found: Vec<(ErrorCategory, Vec<LogLine>)> = Vec::new();
        for line in lines {
            let Some(cat) = classify_line(&line.text) else {
                continue;
            };
            match found.iter_mut().find(|(c, _)| *c == cat) {
                Some((_, ev)) if ev.len() < MAX_EVIDENCE => ev.push(line.clone()),
                Some(_) => {}
                None => found.push((cat, vec![line.clone()])),
            }
        }
        let has = |c: ErrorCategory| found.iter().any(|(x, _)| *x == c);
        if has(ErrorCategory::DependencyMissing) || has(ErrorCategory::PortConflict) {
            // Trace heads of the same failure.
            found.retain(|(c, _)| *c != ErrorCategory::UnhandledException);
        }
        found.sort_by_key(|(c, _)| *c);
        out.extend(found.into_iter().map(|(category, evidence_lines)| ErrorSummary {
            service: service.clone(),
            category,
            evidence_lines,
            hint: category.hint().to_owned(),
        }));
    }
    out
}

/// One line per summary, for prompts and CLI output.
pub fn render_summaries(summaries: &[ErrorSummary]) -> String {
    summaries
        .iter()
        .map(|s| {
            let first = s.evidence_lines.first().map_or("", |l| l.text.as_str());
            format!(
                "[{}] {}: {} ({})",
                s.service,
                serde_json::to_value(s.category)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                first.trim(),
                s.hint
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime_tools::compose::parse_logs;

    #[test]
    fn classification() {
        assert_eq!(
            classify_line("Error: listen EADDRINUSE: address already in use :::3000"),
            Some(ErrorCategory::PortConflict)
        );
        assert_eq!(
            classify_line("Error: Cannot find module 'express'"),
            Some(ErrorCategory::DependencyMissing)
        );
        assert_eq!(
            classify_line(r#"::ffff:172.18.0.1 - - "GET /products HTTP/1.1" 500 21"#),
            Some(ErrorCategory::Http5xx)
        );
        assert_eq!(
            classify_line("TypeError: Cannot read properties of undefined (reading 'id')"),
            Some(ErrorCategory::UnhandledException)
        );
        assert_eq!(classify_line("Server listening on port 3000"), None);
        assert_eq!(classify_line("GET /products 200 12ms"), None);
    }

    #[test]
    fn module_not_found_trace_is_one_summary() {
        let log = "\
api-1  | 2024-05-01T10:00:00Z node:internal/modules/cjs/loader:1080
api-1  | 2024-05-01T10:00:00Z   throw err;
api-1  | 2024-05-01T10:00:00Z   ^
api-1  | 2024-05-01T10:00:00Z Error: Cannot find module 'express'
api-1  | 2024-05-01T10:00:00Z Require stack:
api-1  | 2024-05-01T10:00:00Z - /app/server/index.js
api-1  | 2024-05-01T10:00:00Z     at Module._resolveFilename (node:internal/modules/cjs/loader:1077:15)
api-1  | 2024-05-01T10:00:00Z   code: 'MODULE_NOT_FOUND',
api-1  | 2024-05-01T10:00:00Z Node.js v18.19.0
";
        let s = extract_errors(&parse_logs(log, "", 200));
        assert_eq!(s.len(), 1, "{s:?}");
        assert_eq!(s[0].category, ErrorCategory::DependencyMissing);
        assert_eq!(s[0].evidence_lines.len(), 2);
    }

    #[test]
    fn clean_logs() {
        let log = "api-1  | 2024-05-01T10:00:00Z > node server/index.js\napi-1  | 2024-05-01T10:00:01Z Server listening on port 3000\n";
        assert!(extract_errors(&parse_logs(log, "", 200)).is_empty());
    }
}
