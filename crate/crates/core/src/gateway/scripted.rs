use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatTurn, Fingerprint, GatewayError};

type Responder = Box<dyn FnMut(&ChatRequest<'_>) -> ChatTurn + Send>;

enum Script {
    Queue(VecDeque<ChatTurn>),
    Responder(Responder),
}

/// Mock backend: either a fixed queue of turns served in order, or a
/// closure that computes a turn from the request.
pub struct ScriptedBackend {
    script: Mutex<Script>,
}

impl ScriptedBackend {
    pub fn new(turns: Vec<ChatTurn>) -> Self {
        Self {
            script: Mutex::new(Script::Queue(turns.into())),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: FnMut(&ChatRequest<'_>) -> ChatTurn + Send + 'static,
    {
        Self {
            script: Mutex::new(Script::Responder(Box::new(f))),
        }
    }

    /// Load a queue from a JSON-lines file of wire-format assistant turns.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read script {}: {e}", path.display())))?;
        let mut turns = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let turn: ChatTurn = serde_json::from_str(line).map_err(|e| {
                GatewayError::Config(format!("script {} line {}: {e}", path.display(), i + 1))
            })?;
            turns.push(turn);
        }
        Ok(Self::new(turns))
    }
}

impl ChatBackend for ScriptedBackend {
    fn respond(&self, request: &ChatRequest<'_>, fingerprint: &Fingerprint) -> Result<ChatTurn, GatewayError> {
        let mut script = self.script.lock().expect("script poisoned");
        match &mut *script {
            Script::Queue(q) => q.pop_front().ok_or_else(|| GatewayError::ScriptExhausted {
                fingerprint: fingerprint.clone(),
            }),
            Script::Responder(f) => Ok(f(request)),
        }
    }
}
