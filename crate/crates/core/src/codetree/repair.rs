//! Deterministic repair of malformed model JSON.
//!
//! Rules run in a fixed order and the whole pipeline is iterated until a
//! pass changes nothing, so repairing an already repaired text applies no
//! rule. Strictly valid JSON is returned untouched.

use std::fmt;

use serde::{Deserialize, Serialize};

const MAX_PASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairRule {
    StripBom,
    StripWrapping,
    SmartQuotes,
    TrailingCommas,
    EscapeControlChars,
    EscapeBackslashes,
    TruncationClose,
}

impl RepairRule {
    pub const PIPELINE: [RepairRule; 7] = [
        RepairRule::StripBom,
        RepairRule::StripWrapping,
        RepairRule::SmartQuotes,
        RepairRule::TrailingCommas,
        RepairRule::EscapeControlChars,
        RepairRule::EscapeBackslashes,
        RepairRule::TruncationClose,
    ];

    pub fn id(self) -> &'static str {
        match self {
            RepairRule::StripBom => "strip_bom",
            RepairRule::StripWrapping => "strip_wrapping",
            RepairRule::SmartQuotes => "smart_quotes",
            RepairRule::TrailingCommas => "trailing_commas",
            RepairRule::EscapeControlChars => "escape_control_chars",
            RepairRule::EscapeBackslashes => "escape_backslashes",
            RepairRule::TruncationClose => "truncation_close",
        }
    }

    fn apply(self, text: &str) -> String {
        match self {
            RepairRule::StripBom => strip_bom(text),
            RepairRule::StripWrapping => strip_wrapping(text),
            RepairRule::SmartQuotes => normalize_smart_quotes(text),
            RepairRule::TrailingCommas => remove_trailing_commas(text),
            RepairRule::EscapeControlChars => escape_control_chars(text),
            RepairRule::EscapeBackslashes => escape_lone_backslashes(text),
            RepairRule::TruncationClose => close_truncated(text),
        }
    }
}

impl fmt::Display for RepairRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub rules_applied: Vec<RepairRule>,
    pub changed: bool,
    pub before_len: usize,
    pub after_len: usize,
}

pub fn is_strict_json(text: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(text).is_ok()
}

/// Run the repair pipeline over `text`.
///
/// Never fails: in the worst case the input comes back with an empty report
/// and the downstream strict parser reports the problem.
pub fn repair_json(text: &str) -> (String, RepairReport) {
    let before_len = text.len();
    let mut current = text.to_owned();
    let mut applied: Vec<RepairRule> = Vec::new();

    for _ in 0..MAX_PASSES {
        if is_strict_json(&current) {
            break;
        }
        let mut pass_changed = false;
        for rule in RepairRule::PIPELINE {
            let next = rule.apply(&current);
            if next != current {
                current = next;
                pass_changed = true;
                if !applied.contains(&rule) {
                    applied.push(rule);
                }
            }
        }
        if !pass_changed {
            break;
        }
    }

    let report = RepairReport {
        changed: !applied.is_empty(),
        rules_applied: applied,
        before_len,
        after_len: current.len(),
    };
    (current, report)
}

fn is_smart_double_quote(c: char) -> bool {
    matches!(c, '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}')
}

fn strip_bom(text: &str) -> String {
    text.trim_start_matches('\u{FEFF}').to_owned()
}

/// Keep the outermost `{...}` span, dropping prose and code fences around it.
fn strip_wrapping(text: &str) -> String {
    let Some(start) = text.find('{') else {
        return text.to_owned();
    };
    let body = &text[start..];
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return body[..i + c.len_utf8()].to_owned();
                }
            }
            _ => {}
        }
    }

    // Unbalanced: keep everything from the brace, minus a trailing fence.
    let mut tail = body.trim_end();
    while let Some(stripped) = tail.strip_suffix("```") {
        tail = stripped.trim_end();
    }
    tail.to_owned()
}

fn normalize_smart_quotes(text: &str) -> String {
    #[derive(Clone, Copy)]
    enum State {
        Normal,
        Str { escaped: bool },
        Smart,
        SmartEscaped,
    }

    let mut out = String::with_capacity(text.len());
    let mut state = State::Normal;
    for c in text.chars() {
        state = match state {
            State::Normal => {
                if c == '"' {
                    out.push(c);
                    State::Str { escaped: false }
                } else if is_smart_double_quote(c) {
                    out.push('"');
                    State::Smart
                } else {
                    out.push(c);
                    State::Normal
                }
            }
            State::Str { escaped } => {
                out.push(c);
                if escaped {
                    State::Str { escaped: false }
                } else if c == '\\' {
                    State::Str { escaped: true }
                } else if c == '"' {
                    State::Normal
                } else {
                    State::Str { escaped: false }
                }
            }
            State::Smart => {
                if is_smart_double_quote(c) {
                    out.push('"');
                    State::Normal
                } else if c == '"' {
                    out.push_str("\\\"");
                    State::Smart
                } else if c == '\\' {
                    out.push(c);
                    State::SmartEscaped
                } else {
                    out.push(c);
                    State::Smart
                }
            }
            State::SmartEscaped => {
                out.push(c);
                State::Smart
            }
        };
    }
    out
}

fn remove_trailing_commas(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            '}' | ']' => {
                drop_dangling_commas(&mut out);
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

/// Remove commas from the whitespace/comma run at the end of `out`.
fn drop_dangling_commas(out: &mut String) {
    let keep = out
        .trim_end_matches(|c: char| c.is_whitespace() || c == ',')
        .len();
    if out[keep..].contains(',') {
        let tail: String = out[keep..].chars().filter(|&c| c != ',').collect();
        out.truncate(keep);
        out.push_str(&tail);
    }
}

fn push_control_escape(out: &mut String, c: char) {
    match c {
        '\n' => out.push_str("\\n"),
        '\r' => out.push_str("\\r"),
        '\t' => out.push_str("\\t"),
        '\u{8}' => out.push_str("\\b"),
        '\u{c}' => out.push_str("\\f"),
        other => out.push_str(&format!("\\u{:04x}", other as u32)),
    }
}

fn escape_control_chars(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
            continue;
        }
        if escaped {
            escaped = false;
            if c.is_control() && (c as u32) < 0x20 {
                // Backslash directly before a raw control char: the backslash is
                // already in `out`, so emit only the escape letter.
                let mut tmp = String::new();
                push_control_escape(&mut tmp, c);
                out.push_str(&tmp[1..]);
            } else {
                out.push(c);
            }
            continue;
        }
        match c {
            '\\' => {
                escaped = true;
                out.push(c);
            }
            '"' => {
                in_string = false;
                out.push(c);
            }
            c if (c as u32) < 0x20 => push_control_escape(&mut out, c),
            c => out.push(c),
        }
    }
    out
}

fn escape_lone_backslashes(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_string = false;
                out.push(c);
                i += 1;
            }
            '\\' => match chars.get(i + 1) {
                Some(&n) if matches!(n, '"' | '\\' | '/' | 'b' | 'f' | 'n' | 'r' | 't') => {
                    out.push(c);
                    out.push(n);
                    i += 2;
                }
                Some(&'u')
                    if chars.len() >= i + 6
                        && chars[i + 2..i + 6].iter().all(|h| h.is_ascii_hexdigit()) =>
                {
                    out.extend(&chars[i..i + 6]);
                    i += 6;
                }
                _ => {
                    out.push_str("\\\\");
                    i += 1;
                }
            },
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ObjState {
    ExpectKey { after_comma: bool },
    AfterKey,
    ExpectValue,
    AfterValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArrState {
    ExpectValue { after_comma: bool },
    AfterValue,
}

#[derive(Debug, Clone, Copy)]
enum Frame {
    Obj(ObjState),
    Arr(ArrState),
}

fn complete_value(stack: &mut [Frame]) {
    match stack.last_mut() {
        Some(Frame::Obj(state @ ObjState::ExpectValue)) => *state = ObjState::AfterValue,
        Some(Frame::Arr(state @ ArrState::ExpectValue { .. })) => *state = ArrState::AfterValue,
        _ => {}
    }
}

fn complete_string(stack: &mut [Frame]) {
    match stack.last_mut() {
        Some(Frame::Obj(state @ ObjState::ExpectKey { .. })) => *state = ObjState::AfterKey,
        _ => complete_value(stack),
    }
}

/// Close an output that was cut off mid-document.
fn close_truncated(text: &str) -> String {
    let mut stack: Vec<Frame> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;

    for c in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
                complete_string(&mut stack);
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push(Frame::Obj(ObjState::ExpectKey { after_comma: false })),
            '[' => stack.push(Frame::Arr(ArrState::ExpectValue { after_comma: false })),
            '}' | ']' => {
                if stack.pop().is_some() {
                    complete_value(&mut stack);
                }
            }
            ':' => {
                if let Some(Frame::Obj(state @ ObjState::AfterKey)) = stack.last_mut() {
                    *state = ObjState::ExpectValue;
                }
            }
            ',' => match stack.last_mut() {
                Some(Frame::Obj(state @ ObjState::AfterValue)) => {
                    *state = ObjState::ExpectKey { after_comma: true }
                }
                Some(Frame::Arr(state @ ArrState::AfterValue)) => {
                    *state = ArrState::ExpectValue { after_comma: true }
                }
                _ => {}
            },
            c if c.is_whitespace() => {}
            _ => complete_value(&mut stack),
        }
    }

    if !in_string && stack.is_empty() {
        return text.to_owned();
    }

    let mut out = text.to_owned();
    if in_string {
        if escaped {
            // A dangling backslash would escape the closing quote.
            out.push('\\');
        }
        out.push('"');
        complete_string(&mut stack);
    }
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Obj(state) => {
                match state {
                    ObjState::ExpectKey { after_comma: true } => drop_last_comma(&mut out),
                    ObjState::AfterKey => out.push_str(":null"),
                    ObjState::ExpectValue => out.push_str("null"),
                    _ => {}
                }
                out.push('}');
            }
            Frame::Arr(state) => {
                if state == (ArrState::ExpectValue { after_comma: true }) {
                    drop_last_comma(&mut out);
                }
                out.push(']');
            }
        }
        complete_value(&mut stack);
    }
    out
}

fn drop_last_comma(out: &mut String) {
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    if out.ends_with(',') {
        out.pop();
    }
}
