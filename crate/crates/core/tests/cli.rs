mod common;

use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use serde_json::Value;
use specforge::cli::{run_with, Io};
use specforge::runtime_tools::UreqTransport;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str], stdin: &str) -> Out {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut io = Io {
        stdin: &mut input,
        stdout: &mut out,
        stderr: &mut err,
    };
    let mut argv = vec!["specforge"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &mut io);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

struct Env {
    url: String,
    work: tempfile::TempDir,
    _root: tempfile::TempDir,
}

impl Env {
    fn start() -> Env {
        Self::with_factory(default_factory(Fixer::Repairs))
    }

    fn with_factory<F>(f: F) -> Env
    where
        F: Fn(&specforge::session::SessionConfig) -> Result<specforge::session::Runtime, specforge::session::SessionError>
            + Send
            + Sync
            + 'static,
    {
        let root = tempfile::tempdir().unwrap();
        let url = spawn_service(root.path(), f);
        Env {
            url,
            work: tempfile::tempdir().unwrap(),
            _root: root,
        }
    }

    fn run(&self, args: &[&str], stdin: &str) -> Out {
        let ws = self.work.path().to_str().unwrap().to_owned();
        let mut all = vec!["--service-url", self.url.as_str(), "--workspace", ws.as_str()];
        all.extend_from_slice(args);
        cli(&all, stdin)
    }
}

/// Service whose probes go over real HTTP to a stub server.
fn probing_env(api: Arc<StubApi>) -> (Env, String) {
    let stub = spawn_stub_server(api);
    let env = Env::with_factory(factory(
        Arc::new(scripted_gateway(Fixer::Repairs)),
        Arc::new(healthy_runner()),
        Arc::new(UreqTransport::new(Duration::from_secs(5))),
        fixed_clock(),
    ));
    (env, stub)
}

fn prepare_running(env: &Env, extra: &[&str]) {
    let mut args = vec!["new", "--id", "s1"];
    args.extend_from_slice(extra);
    assert_eq!(env.run(&args, "").code, 0);
    for step in ["finalize", "generate", "run"] {
        let out = env.run(&[step], "");
        assert_eq!(out.code, 0, "{step}: {}{}", out.stdout, out.stderr);
    }
}

#[test]
fn new_prints_id_and_sets_default() {
    let env = Env::start();
    let out = env.run(&["new", "--id", "s1"], "");
    assert_eq!(out.code, 0);
    assert_eq!(out.stdout.trim(), "s1");
    let saved = std::fs::read_to_string(env.work.path().join(".specforge-session")).unwrap();
    assert_eq!(saved.trim(), "s1");
}

#[test]
fn chat_quits_cleanly() {
    let env = Env::start();
    env.run(&["new", "--id", "s1"], "");
    let transcript = env.work.path().join("chat.txt");
    let out = env.run(
        &["chat", "--transcript", transcript.to_str().unwrap()],
        "A product service\nquit\nnot sent\n",
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("you> A product service"));
    assert!(out.stdout.contains("spec_generator> Here is a draft"));
    let text = std::fs::read_to_string(transcript).unwrap();
    assert!(!text.contains("not sent"));
}

#[test]
fn chat_ends_on_eof() {
    let env = Env::start();
    env.run(&["new", "--id", "s1"], "");
    assert_eq!(env.run(&["chat"], "hello\n").code, 0);
}

#[test]
fn unknown_session_exits_4() {
    let env = Env::start();
    let out = env.run(&["--session", "ghost", "status"], "");
    assert_eq!(out.code, 4);
    assert!(out.stderr.contains("unknown session"));
    let out = env.run(&["--session", "ghost", "chat"], "quit\n");
    assert_eq!(out.code, 4);
}

#[test]
fn missing_default_session_is_usage_error() {
    let env = Env::start();
    assert_eq!(env.run(&["status"], "").code, 2);
}

#[test]
fn unreachable_service_exits_3() {
    let work = tempfile::tempdir().unwrap();
    let out = cli(
        &["--service-url", "http://127.0.0.1:9", "--workspace", work.path().to_str().unwrap(), "new"],
        "",
    );
    assert_eq!(out.code, 3);
}

#[test]
fn wrong_phase_exits_5_with_hint() {
    let env = Env::start();
    env.run(&["new", "--id", "s1"], "");
    let out = env.run(&["run"], "");
    assert_eq!(out.code, 5);
    assert!(out.stderr.contains("hint:"), "{}", out.stderr);
    let out = env.run(&["--json", "run"], "");
    assert_eq!(out.code, 5);
    let v: Value = serde_json::from_str(out.stdout.trim()).unwrap();
    assert_eq!(v["code"], "wrong_phase");
}

#[test]
fn status_json_lists_services() {
    let env = Env::start();
    prepare_running(&env, &[]);
    let out = env.run(&["--json", "status"], "");
    assert_eq!(out.code, 0);
    let v: Value = serde_json::from_str(out.stdout.trim()).unwrap();
    assert_eq!(v[0]["service_name"], "api");
    assert_eq!(v[0]["state"], "running");
    let out = env.run(&["status"], "");
    assert!(out.stdout.starts_with("SERVICE"));
    assert!(out.stdout.contains("3000->3000"));
}

#[test]
fn logs_text_shows_lines() {
    let env = Env::start();
    prepare_running(&env, &[]);
    let out = env.run(&["logs", "--tail", "10"], "");
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("Server listening on port 3000"));
}

#[test]
fn probe_against_stub_server_passes() {
    let (env, stub) = probing_env(StubApi::new());
    prepare_running(&env, &["--service-base-url", &stub]);
    let out = env.run(&["probe"], "");
    assert_eq!(out.code, 0, "{}{}", out.stdout, out.stderr);
    let rows: Vec<&str> = out.stdout.lines().filter(|l| l.contains("/products")).collect();
    assert_eq!(rows.len(), 4, "{}", out.stdout);
}

#[test]
fn probe_with_schema_violation_exits_1() {
    let (env, stub) = probing_env(StubApi::dropping_price());
    prepare_running(&env, &["--service-base-url", &stub]);
    let out = env.run(&["--json", "probe"], "");
    assert_eq!(out.code, 1);
    let v: Value = serde_json::from_str(out.stdout.trim()).unwrap();
    assert_eq!(v["result"]["failed"], 1);
}

#[test]
fn fix_with_healthy_service_resolves() {
    let env = Env::start();
    prepare_running(&env, &[]);
    let out = env.run(&["fix", "make sure it still runs"], "");
    assert_eq!(out.code, 0, "{}{}", out.stdout, out.stderr);
    assert!(out.stdout.contains("phase: running"));
}

#[test]
fn export_writes_file() {
    let env = Env::start();
    env.run(&["new", "--id", "s1"], "");
    let path = env.work.path().join("export.json");
    assert_eq!(env.run(&["export", "--output", path.to_str().unwrap()], "").code, 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["state"]["session_id"], "s1");
}

#[test]
fn bad_flag_is_usage_error() {
    assert_eq!(cli(&["status", "--nope"], "").code, 2);
    assert_eq!(cli(&["--help"], "").code, 0);
}

const SCRIPT: &str = "# product service
A product inventory service with name, price and quantity
/finalize
/generate
/run
/status
show me the logs
/probe
";

#[test]
fn replay_transcript_is_identical_across_runs() {
    let mut transcripts = Vec::new();
    for _ in 0..2 {
        let env = Env::start();
        let script = env.work.path().join("script.txt");
        std::fs::write(&script, SCRIPT).unwrap();
        let transcript = env.work.path().join("out.txt");
        let out = env.run(
            &[
                "replay",
                script.to_str().unwrap(),
                "--id",
                "r1",
                "--transcript",
                transcript.to_str().unwrap(),
            ],
            "",
        );
        assert_eq!(out.code, 0, "{}{}", out.stdout, out.stderr);
        transcripts.push(std::fs::read_to_string(transcript).unwrap());
    }
    assert_eq!(transcripts[0], transcripts[1]);
    assert!(transcripts[0].contains("== phase generated -> running =="));
}
