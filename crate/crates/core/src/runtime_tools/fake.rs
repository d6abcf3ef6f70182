//! In-memory stand-in for the container engine.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use super::runner::{CommandOutput, CommandSpec, ProcessRunner, RunnerError};

type Responder = dyn Fn(&CommandSpec, usize) -> CommandOutput + Send + Sync;

enum Mode {
    /// Per compose subcommand; the last queued output repeats.
    Queues(BTreeMap<String, VecDeque<CommandOutput>>),
    Closure(Box<Responder>),
}

/// Records every command and answers from queued outputs or a closure.
pub struct FakeRunner {
    mode: Mutex<Mode>,
    calls: Mutex<Vec<CommandSpec>>,
    unavailable: bool,
}

/// Compose subcommand of an argv (`["compose", "up", ...]` gives `"up"`).
pub fn compose_subcommand(args: &[String]) -> &str {
    match args {
        [first, sub, ..] if first == "compose" => sub,
        [only, ..] => only,
        [] => "",
    }
}

impl Default for FakeRunner {
    fn default() -> Self {
        Self::new()
    }
}

impl FakeRunner {
    /// Every command succeeds with empty output.
    pub fn new() -> Self {
        Self {
            mode: Mutex::new(Mode::Queues(BTreeMap::new())),
            calls: Mutex::new(Vec::new()),
            unavailable: false,
        }
    }

    /// Behaves as if the engine binary were not installed.
    pub fn unavailable() -> Self {
        Self {
            unavailable: true,
            ..Self::new()
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CommandSpec, usize) -> CommandOutput + Send + Sync + 'static,
    {
        Self {
            mode: Mutex::new(Mode::Closure(Box::new(f))),
            calls: Mutex::new(Vec::new()),
            unavailable: false,
        }
    }

    /// Queue `output` for the compose subcommand `sub` (`up`, `ps`, `logs`).
    pub fn respond(self, sub: &str, output: CommandOutput) -> Self {
        self.push(sub, output);
        self
    }

    pub fn push(&self, sub: &str, output: CommandOutput) {
        let mut mode = self.mode.lock().expect("fake runner poisoned");
        if let Mode::Queues(q) = &mut *mode {
            q.entry(sub.to_owned()).or_default().push_back(output);
        }
    }

    pub fn calls(&self) -> Vec<CommandSpec> {
        self.calls.lock().expect("fake runner poisoned").clone()
    }

    pub fn argvs(&self) -> Vec<Vec<String>> {
        self.calls()
            .into_iter()
            .map(|c| std::iter::once(c.program).chain(c.args).collect())
            .collect()
    }
}

impl ProcessRunner for FakeRunner {
    fn run(&self, spec: &CommandSpec) -> Result<CommandOutput, RunnerError> {
        if self.unavailable {
            return Err(RunnerError::EngineUnavailable(format!("{}: not found", spec.program)));
        }
        let index = {
            let mut calls = self.calls.lock().expect("fake runner poisoned");
            calls.push(spec.clone());
            calls.len() - 1
        };
        let mut mode = self.mode.lock().expect("fake runner poisoned");
        Ok(match &mut *mode {
            Mode::Closure(f) => f(spec, index),
            Mode::Queues(queues) => match queues.get_mut(compose_subcommand(&spec.args)) {
                Some(q) if q.len() > 1 => q.pop_front().expect("non-empty"),
                Some(q) => q.front().cloned().unwrap_or_else(|| CommandOutput::ok("")),
                None => CommandOutput::ok(""),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;
    use std::time::Duration;

    fn cmd(sub: &str) -> CommandSpec {
        CommandSpec {
            program: "docker".into(),
            args: vec!["compose".into(), sub.into()],
            working_dir: PathBuf::from("/w"),
            timeout: Duration::from_secs(1),
        }
    }

    #[test]
    fn last_output_repeats() {
        let r = FakeRunner::new()
            .respond("up", CommandOutput::failed(1, "boom"))
            .respond("up", CommandOutput::ok("done"));
        assert_eq!(r.run(&cmd("up")).unwrap().exit_code, Some(1));
        assert_eq!(r.run(&cmd("up")).unwrap().stdout, "done");
        assert_eq!(r.run(&cmd("up")).unwrap().stdout, "done");
        assert!(r.run(&cmd("ps")).unwrap().success());
        assert_eq!(r.calls().len(), 4);
    }
}
