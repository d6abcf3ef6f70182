//! The five agent roles and their single-step behavior over the gateway.

mod steps;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime_tools::{
    CHECK_DOCKER_COMPOSE_STATUS, GET_DOCKER_COMPOSE_LOGS, RUN_CURL_COMMAND, RUN_DOCKER_COMPOSE, SAVE_JSON,
    SAVE_OPENAPI_SPEC, UPDATE_JSON,
};

pub use steps::{
    code_fixer_run, code_generator_run, code_tester_step, extract_spec_draft, finalize_step, json_cleaner_run,
    spec_generator_step, CleanedTree, SpecStepOutcome, StepOutcome, TaskRun, ToolEffect, DEFAULT_LLM_REPAIR_ATTEMPTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    SpecGenerator,
    CodeGenerator,
    JsonCleaner,
    CodeFixer,
    CodeTester,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    /// The role keeps its whole conversation across user messages.
    FullHistory,
    /// Every run starts from the system prompt and the task alone.
    TaskOnly,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::SpecGenerator,
        AgentRole::CodeGenerator,
        AgentRole::JsonCleaner,
        AgentRole::CodeFixer,
        AgentRole::CodeTester,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::SpecGenerator => "spec_generator",
            AgentRole::CodeGenerator => "code_generator",
            AgentRole::JsonCleaner => "json_cleaner",
            AgentRole::CodeFixer => "code_fixer",
            AgentRole::CodeTester => "code_tester",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn allowed_tools(self) -> &'static [&'static str] {
        match self {
            AgentRole::SpecGenerator => &[SAVE_OPENAPI_SPEC],
            AgentRole::CodeGenerator | AgentRole::CodeFixer => &[SAVE_JSON],
            AgentRole::JsonCleaner => &[],
            AgentRole::CodeTester => &[
                RUN_DOCKER_COMPOSE,
                CHECK_DOCKER_COMPOSE_STATUS,
                GET_DOCKER_COMPOSE_LOGS,
                RUN_CURL_COMMAND,
                UPDATE_JSON,
            ],
        }
    }

    pub fn memory_policy(self) -> MemoryPolicy {
        match self {
            AgentRole::SpecGenerator | AgentRole::CodeTester => MemoryPolicy::FullHistory,
            _ => MemoryPolicy::TaskOnly,
        }
    }

    pub fn system_prompt_template(self) -> &'static str {
        match self {
            AgentRole::SpecGenerator => include_str!("../../prompts/spec_generator.txt"),
            AgentRole::CodeGenerator => include_str!("../../prompts/code_generator.txt"),
            AgentRole::JsonCleaner => include_str!("../../prompts/json_cleaner.txt"),
            AgentRole::CodeFixer => include_str!("../../prompts/code_fixer.txt"),
            AgentRole::CodeTester => include_str!("../../prompts/code_tester.txt"),
        }
    }
}

/// Stack and layout the code generator is asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationDirectives {
    pub target_stack: String,
    pub folder_layout: String,
    pub container_layout: String,
    /// Files that count as the server entry point; one must be generated.
    #[serde(default = "default_entry_points")]
    pub entry_points: Vec<String>,
}

fn default_entry_points() -> Vec<String> {
    vec!["server/index.js".to_owned()]
}

impl Default for GenerationDirectives {
    fn default() -> Self {
        Self {
            target_stack: "node-express".to_owned(),
            folder_layout: "\
- server/index.js: Express entry point; reads PORT (default 3000) and mounts the routers
- server/routes/<resource>.js: one router per resource with its CRUD handlers
- package.json: dependencies (express) and a start script `node server/index.js`"
                .to_owned(),
            container_layout: "\
- Dockerfile: node:18-alpine, copies package.json, runs npm install, copies the code, CMD [\"npm\", \"start\"]
- docker-compose.yml: one service `api` built from `.`, publishing 3000:3000"
                .to_owned(),
            entry_points: default_entry_points(),
        }
    }
}

impl GenerationDirectives {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_stack.trim().is_empty() {
            return Err("target_stack is empty".into());
        }
        if !self
            .entry_points
            .iter()
            .any(|p| self.folder_layout.contains(p.as_str()))
        {
            return Err("folder_layout does not mention any entry point".into());
        }
        Ok(())
    }

    fn bindings(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("target_stack", self.target_stack.clone()),
            ("folder_layout", self.folder_layout.clone()),
            ("container_layout", self.container_layout.clone()),
            (
                "entry_point",
                self.entry_points.first().cloned().unwrap_or_default(),
            ),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no binding for placeholder {{{0}}}")]
    MissingPlaceholder(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").expect("static regex"))
}

/// Placeholder names in `template`, in order of first use.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in placeholder_re().captures_iter(template) {
        let name = c[1].to_owned();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

/// Substitute `{name}` placeholders from the directives and `context`
/// (context wins on overlap).
pub fn render_system_prompt(
    role: AgentRole,
    directives: &GenerationDirectives,
    context: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    render_template(role.system_prompt_template(), directives, context)
}

pub fn render_template(
    template: &str,
    directives: &GenerationDirectives,
    context: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let base = directives.bindings();
    if let Some(missing) = placeholders(template)
        .into_iter()
        .find(|p| !context.contains_key(p) && !base.contains_key(p.as_str()))
    {
        return Err(PromptError::MissingPlaceholder(missing));
    }
    // Single pass, so substituted text is never rescanned.
    Ok(placeholder_re()
        .replace_all(template, |c: &regex::Captures<'_>| {
            let name = &c[1];
            context
                .get(name)
                .cloned()
                .or_else(|| base.get(name).cloned())
                .unwrap_or_default()
        })
        .into_owned())
}
