use std::io::{self, Read};
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Programs a tool may spawn.
pub const PROGRAM_ALLOW_LIST: [&str; 1] = ["docker"];

pub const DEFAULT_ENGINE: &str = "docker";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    pub args: Vec<String>,
    pub working_dir: PathBuf,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandOutput {
    /// `None` when the process was killed (timeout, signal).
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    #[serde(default)]
    pub timed_out: bool,
}

impl CommandOutput {
    pub fn ok(stdout: impl Into<String>) -> Self {
        Self {
            exit_code: Some(0),
            stdout: stdout.into(),
            ..Self::default()
        }
    }

    pub fn failed(code: i32, stderr: impl Into<String>) -> Self {
        Self {
            exit_code: Some(code),
            stderr: stderr.into(),
            ..Self::default()
        }
    }

    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("program \"{0}\" is not on the allow-list")]
    ProgramNotAllowed(String),
    #[error("working directory {dir} is outside the session workspace {workspace}")]
    OutsideWorkspace { dir: PathBuf, workspace: PathBuf },
    #[error("container engine unavailable: {0}")]
    EngineUnavailable(String),
    #[error("failed to run {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
}

pub trait ProcessRunner: Send + Sync {
    fn run(&self, spec: &CommandSpec) -> Result<CommandOutput, RunnerError>;
}

/// Lexical normalization: resolves `.` and `..` without touching the disk.
fn normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    Some(out)
}

/// Checks the allow-list and workspace confinement of a command.
pub fn check_command(spec: &CommandSpec, workspace: &Path) -> Result<(), RunnerError> {
    if !PROGRAM_ALLOW_LIST.contains(&spec.program.as_str()) {
        return Err(RunnerError::ProgramNotAllowed(spec.program.clone()));
    }
    let outside = || RunnerError::OutsideWorkspace {
        dir: spec.working_dir.clone(),
        workspace: workspace.to_path_buf(),
    };
    let dir = normalize(&spec.working_dir).ok_or_else(outside)?;
    let root = normalize(workspace).ok_or_else(outside)?;
    if !dir.starts_with(&root) {
        return Err(outside());
    }
    Ok(())
}

/// Run `spec` through `runner` after [`check_command`].
pub fn run_checked(
    runner: &dyn ProcessRunner,
    spec: &CommandSpec,
    workspace: &Path,
) -> Result<CommandOutput, RunnerError> {
    check_command(spec, workspace)?;
    runner.run(spec)
}

/// Spawns real processes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemRunner;

fn drain<R: Read + Send + 'static>(reader: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = reader {
            let _ = r.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

impl ProcessRunner for SystemRunner {
    fn run(&self, spec: &CommandSpec) -> Result<CommandOutput, RunnerError> {
        let mut child = Command::new(&spec.program)
            .args(&spec.args)
            .current_dir(&spec.working_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| {
                if source.kind() == io::ErrorKind::NotFound {
                    RunnerError::EngineUnavailable(format!("{}: {source}", spec.program))
                } else {
                    RunnerError::Spawn {
                        program: spec.program.clone(),
                        source,
                    }
                }
            })?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());

        let deadline = Instant::now() + spec.timeout;
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    timed_out = true;
                    break None;
                }
                Ok(None) => thread::sleep(Duration::from_millis(20)),
                Err(source) => {
                    return Err(RunnerError::Spawn {
                        program: spec.program.clone(),
                        source,
                    })
                }
            }
        };
        Ok(CommandOutput {
            exit_code: status.and_then(|s| s.code()),
            stdout: out.join().unwrap_or_default(),
            stderr: err.join().unwrap_or_default(),
            timed_out,
        })
    }
}
