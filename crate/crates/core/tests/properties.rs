use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use serde_json::{json, Value};
use specforge::codetree::{materialize, parse_filetree, repair_json, FileTree};
use specforge::runtime_tools::{check_command, CommandSpec};
use specforge::session::store::{replay_phases, EventLog};
use specforge::session::{EventKind, Phase, SessionEvent};

// Independent copy of the legal edges.
fn legal(from: &str, to: &str) -> bool {
    matches!(
        (from, to),
        ("drafting", "finalized")
            | ("finalized", "generated")
            | ("generated", "running")
            | ("running", "fixing")
            | ("fixing", "running")
    ) || (from != "closed" && to == "closed")
}

const PHASES: [&str; 6] = ["drafting", "finalized", "generated", "running", "fixing", "closed"];

fn phase_of(name: &str) -> Phase {
    serde_json::from_value(json!(name)).unwrap()
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i32>().prop_map(|n| json!(n)),
        (-1e6f64..1e6).prop_map(|f| json!(f)),
        "[ -~\\n\\t\"\\\\é]{0,12}".prop_map(Value::String),
    ];
    leaf.prop_recursive(4, 32, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..5).prop_map(Value::Array),
            prop::collection::btree_map("[a-z_]{1,6}", inner, 0..5)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn repair_leaves_valid_json_alone(v in json_value(), pretty in any::<bool>()) {
        let text = if pretty { serde_json::to_string_pretty(&v).unwrap() } else { v.to_string() };
        let (out, report) = repair_json(&text);
        prop_assert_eq!(&out, &text);
        prop_assert!(!report.changed);
        prop_assert!(report.rules_applied.is_empty());
    }

    #[test]
    fn repair_is_idempotent(s in "[ -~\\n\\t]{0,80}") {
        let (once, _) = repair_json(&s);
        let (twice, _) = repair_json(&once);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn repair_is_idempotent_on_json_like_text(s in "[{}\\[\\],:\"a-c0-9 \\n'/*]{0,60}") {
        let (once, _) = repair_json(&s);
        let (twice, _) = repair_json(&once);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn truncated_objects_repair_to_valid_json(v in json_value(), cut in 0.0f64..1.0) {
        let text = json!({"k": v}).to_string();
        let mut at = ((text.len() as f64) * cut) as usize;
        while !text.is_char_boundary(at) {
            at -= 1;
        }
        let (out, _) = repair_json(&text[..at.max(1)]);
        // Truncation can only remove content, so the result, when valid, is an object.
        if let Ok(parsed) = serde_json::from_str::<Value>(&out) {
            prop_assert!(parsed.is_object(), "{}", out);
        }
    }
}

fn segment() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => "[a-zA-Z0-9_-]{1,8}",
        1 => Just("..".to_owned()),
        1 => Just(".".to_owned()),
        1 => Just(String::new()),
        1 => Just("C:".to_owned()),
        1 => "[a-z]{1,3}\\\\[a-z]{1,3}",
        1 => "[a-z]{1,3}[\\x00-\\x1f][a-z]{0,2}",
    ]
}

fn raw_path() -> impl Strategy<Value = String> {
    (any::<bool>(), prop::collection::vec(segment(), 1..5))
        .prop_map(|(abs, segs)| format!("{}{}", if abs { "/" } else { "" }, segs.join("/")))
}

// Oracle for the path rules.
fn path_ok(p: &str) -> bool {
    if p.is_empty() || p.starts_with('/') || p.contains('\\') || p.chars().any(char::is_control) {
        return false;
    }
    let first = p.split('/').next().unwrap();
    if first.len() == 2 && first.as_bytes()[0].is_ascii_alphabetic() && first.ends_with(':') {
        return false;
    }
    p.split('/').all(|s| !s.is_empty() && s != "." && s != "..")
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().to_path_buf())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn unsafe_paths_never_touch_disk(path in raw_path()) {
        let outer = tempfile::tempdir().unwrap();
        let root = outer.path().join("root");
        std::fs::create_dir(&root).unwrap();
        let text = json!({ path.clone(): "x" }).to_string();
        let parsed = parse_filetree(&text);
        prop_assert_eq!(parsed.is_ok(), path_ok(&path), "{:?}", path);
        let tree = FileTree::from_entries([(path.clone(), "x".to_owned())]);
        let result = materialize(&tree, &root);
        if path_ok(&path) {
            prop_assert!(result.is_ok());
            prop_assert!(root.join(&path).is_file());
        } else {
            prop_assert!(result.is_err());
            prop_assert!(all_files(outer.path()).is_empty());
        }
    }

    #[test]
    fn runner_refuses_dirs_outside_workspace(
        ups in 0usize..4,
        downs in prop::collection::vec("[a-z]{1,5}", 0..4),
        program in prop_oneof![Just("docker"), Just("sh"), Just("curl")],
    ) {
        let workspace = PathBuf::from("/srv/sessions/s1");
        let mut dir = workspace.clone();
        for _ in 0..ups {
            dir.push("..");
        }
        for d in &downs {
            dir.push(d);
        }
        let spec = CommandSpec {
            program: program.to_owned(),
            args: vec!["compose".into(), "ps".into()],
            working_dir: dir,
            timeout: Duration::from_secs(1),
        };
        // Every `..` needs a matching descent back to stay inside; the
        // first component after leaving must be the workspace name.
        let inside = ups == 0 || (ups <= 3 && downs.len() >= ups && {
            let prefix: Vec<&str> = ["srv", "sessions", "s1"][3 - ups..].to_vec();
            downs.iter().take(ups).map(String::as_str).eq(prefix.iter().copied())
        });
        let ok = check_command(&spec, &workspace).is_ok();
        prop_assert_eq!(ok, inside && program == "docker");
    }
}

fn phase_event(seq: u64, from: &str, to: &str) -> SessionEvent {
    SessionEvent {
        seq,
        kind: EventKind::PhaseChange,
        payload: json!({"from": from, "to": to}),
        at: Utc.timestamp_opt(0, 0).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn phase_replay_matches_oracle(steps in prop::collection::vec((0usize..6, 0usize..6, any::<bool>()), 0..20)) {
        // Half the time follow from the current phase, otherwise use a
        // random `from` to produce inconsistent logs.
        let mut events = Vec::new();
        let mut current = "drafting";
        let mut valid = true;
        for (i, (f, t, follow)) in steps.iter().enumerate() {
            let from = if *follow { current } else { PHASES[*f] };
            let to = PHASES[*t];
            events.push(phase_event(i as u64 + 1, from, to));
            if valid && !(from == current && legal(from, to)) {
                valid = false;
            }
            current = to;
        }
        match replay_phases(&events) {
            Ok(p) => {
                prop_assert!(valid);
                prop_assert_eq!(p, phase_of(current));
            }
            Err(_) => prop_assert!(!valid),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_cursor_returns_exact_suffix(n in 0usize..40, cursor in 0u64..50) {
        let log = EventLog::in_memory();
        for i in 0..n {
            log.append(EventKind::UserMsg, json!({"text": i.to_string()}), Utc.timestamp_opt(0, 0).unwrap()).unwrap();
        }
        let all = log.all();
        let seqs: Vec<u64> = all.iter().map(|e| e.seq).collect();
        prop_assert_eq!(seqs, (1..=n as u64).collect::<Vec<_>>());
        let after = log.after(cursor);
        let start = (cursor as usize).min(n);
        prop_assert_eq!(after, all[start..].to_vec());
    }
}

#[test]
fn legal_edge_table_matches_engine() {
    let mut table = BTreeMap::new();
    for a in PHASES {
        for b in PHASES {
            table.insert((a, b), specforge::session::is_legal_transition(phase_of(a), phase_of(b)));
        }
    }
    for ((a, b), got) in table {
        assert_eq!(got, legal(a, b), "{a} -> {b}");
    }
}
