//! Plain-text rendering of events and tables.

use std::fmt::Write as _;

use serde_json::Value;

fn s<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn short(v: &Value, limit: usize) -> String {
    let text = v.to_string();
    if text.chars().count() <= limit {
        text
    } else {
        let cut: String = text.chars().take(limit).collect();
        format!("{cut}...")
    }
}

/// One event as one or more lines, without timestamps so output is stable.
pub fn event_line(event: &Value) -> String {
    let p = event.get("payload").cloned().unwrap_or(Value::Null);
    match s(event, "kind") {
        "user_msg" => format!("you> {}", s(&p, "text")),
        "agent_msg" => format!("{}> {}", s(&p, "role"), s(&p, "text")),
        "tool_call" => format!("  -> {} [{}] {}", s(&p, "tool"), s(&p, "call_id"), short(&p["arguments"], 80)),
        "tool_result" => {
            let ok = p.get("ok").and_then(Value::as_bool).unwrap_or(false);
            if ok {
                format!("  <- {} ok", s(&p, "tool"))
            } else {
                let err = p["payload"].get("error").and_then(Value::as_str).unwrap_or("failed");
                format!("  <- {} failed: {err}", s(&p, "tool"))
            }
        }
        "phase_change" => format!("== phase {} -> {} ==", s(&p, "from"), s(&p, "to")),
        "artifact_saved" => match s(&p, "artifact") {
            "probe_report" => format!(
                "  saved probe report ({} passed, {} failed)",
                p["passed"], p["failed"]
            ),
            other => format!("  saved {other} v{}", p["version"]["version_index"]),
        },
        "error" => format!("error: {}", s(&p, "message")),
        other => format!("{other}: {}", short(&p, 120)),
    }
}

pub fn events_text(events: &[Value]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", event_line(e));
    }
    out
}

pub fn status_table(services: &[Value]) -> String {
    let mut out = format!("{:<24} {:<11} {:>5} PORTS\n", "SERVICE", "STATE", "EXIT");
    for svc in services {
        let ports: Vec<String> = svc["ports"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|p| format!("{}->{}", p[0], p[1]))
                    .collect()
            })
            .unwrap_or_default();
        let exit = match svc["exit_code"].as_i64() {
            Some(-1) | None => "-".to_owned(),
            Some(c) => c.to_string(),
        };
        let _ = writeln!(
            out,
            "{:<24} {:<11} {:>5} {}",
            s(svc, "service_name"),
            s(svc, "state"),
            exit,
            ports.join(", ")
        );
    }
    out
}

pub fn summaries_text(summaries: &[Value]) -> String {
    let mut out = String::new();
    for sm in summaries {
        let _ = writeln!(out, "[{}] {}: {}", s(sm, "category"), s(sm, "service"), s(sm, "hint"));
        if let Some(lines) = sm["evidence_lines"].as_array() {
            for l in lines {
                let _ = writeln!(out, "    {}", s(l, "text"));
            }
        }
    }
    out
}
