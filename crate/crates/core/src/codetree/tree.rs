use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::agents::GenerationDirectives;
use crate::finding::Finding;

/// File names recognized as the container descriptor at the tree root.
pub const COMPOSE_FILE_NAMES: [&str; 4] = [
    "docker-compose.yml",
    "docker-compose.yaml",
    "compose.yml",
    "compose.yaml",
];

pub const DEFAULT_ROOT_LABEL: &str = "express-server";

/// Generated code: relative file path mapped to file content.
///
/// Keys are full file paths; their directory prefixes are implied.
/// Iteration order is lexicographic by path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileTree {
    pub entries: BTreeMap<String, String>,
    pub root_label: String,
}

impl Default for FileTree {
    fn default() -> Self {
        Self::new()
    }
}

impl FileTree {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            root_label: DEFAULT_ROOT_LABEL.to_owned(),
        }
    }

    /// Build a tree without checking invariants. Use [`FileTree::check`] or
    /// [`validate_tree`] before trusting it.
    pub fn from_entries<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            root_label: DEFAULT_ROOT_LABEL.to_owned(),
        }
    }

    pub fn with_root_label(mut self, label: impl Into<String>) -> Self {
        self.root_label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.entries.get(path).map(String::as_str)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Serialize as the flat `{path: content}` JSON object the agents exchange.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("string map serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("string map serializes")
    }

    /// Path-safety and file/directory invariants.
    pub fn check(&self) -> Result<(), TreeError> {
        for key in self.entries.keys() {
            check_path(key).map_err(|reason| TreeError::UnsafePath {
                path: key.clone(),
                reason,
            })?;
        }
        if let Some((file, nested)) = first_conflict(&self.entries) {
            return Err(TreeError::FileDirConflict { file, nested });
        }
        Ok(())
    }

    /// Paths whose content differs between `self` and `other`, including
    /// paths present on one side only.
    pub fn changed_paths(&self, other: &FileTree) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (k, v) in &self.entries {
            if other.entries.get(k) != Some(v) {
                out.push(k.clone());
            }
        }
        for k in other.entries.keys() {
            if !self.entries.contains_key(k) {
                out.push(k.clone());
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("file tree JSON is not valid: {message} (line {line}, column {column})")]
    Json {
        message: String,
        line: usize,
        column: usize,
    },
    #[error("file tree JSON must be an object at the top level")]
    NotAnObject,
    #[error("value for \"{path}\" is not a string")]
    NonStringValue { path: String },
    #[error("unsafe path \"{}\": {reason}", .path.escape_debug())]
    UnsafePath { path: String, reason: PathViolation },
    #[error("\"{file}\" is a file but \"{nested}\" needs it to be a directory")]
    FileDirConflict { file: String, nested: String },
    #[error("cannot delete unknown path \"{0}\"")]
    UnknownDeletion(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum PathViolation {
    #[error("empty path")]
    Empty,
    #[error("absolute path")]
    Absolute,
    #[error("empty segment")]
    EmptySegment,
    #[error("dot segment")]
    DotSegment,
    #[error("control character")]
    ControlChar,
    #[error("backslash separator")]
    Backslash,
    #[error("drive prefix")]
    DrivePrefix,
}

/// Check one relative file path against the tree's path rules.
pub fn check_path(path: &str) -> Result<(), PathViolation> {
    if path.is_empty() {
        return Err(PathViolation::Empty);
    }
    if path.chars().any(|c| c.is_control()) {
        return Err(PathViolation::ControlChar);
    }
    if path.starts_with('/') {
        return Err(PathViolation::Absolute);
    }
    if path.contains('\\') {
        return Err(PathViolation::Backslash);
    }
    let first = path.split('/').next().unwrap_or_default();
    if first.len() == 2 && first.ends_with(':') && first.as_bytes()[0].is_ascii_alphabetic() {
        return Err(PathViolation::DrivePrefix);
    }
    for segment in path.split('/') {
        match segment {
            "" => return Err(PathViolation::EmptySegment),
            "." | ".." => return Err(PathViolation::DotSegment),
            _ => {}
        }
    }
    Ok(())
}

fn first_conflict(entries: &BTreeMap<String, String>) -> Option<(String, String)> {
    for key in entries.keys() {
        let mut prefix_end = 0;
        while let Some(pos) = key[prefix_end..].find('/') {
            let dir = &key[..prefix_end + pos];
            if entries.contains_key(dir) {
                return Some((dir.to_owned(), key.clone()));
            }
            prefix_end += pos + 1;
        }
    }
    None
}

fn all_conflicts(entries: &BTreeMap<String, String>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for key in entries.keys() {
        let mut prefix_end = 0;
        while let Some(pos) = key[prefix_end..].find('/') {
            let dir = &key[..prefix_end + pos];
            if entries.contains_key(dir) {
                out.push((dir.to_owned(), key.clone()));
            }
            prefix_end += pos + 1;
        }
    }
    out
}

/// Parse strict JSON text into a [`FileTree`], enforcing tree invariants.
pub fn parse_filetree(json_text: &str) -> Result<FileTree, TreeError> {
    let value: Value = serde_json::from_str(json_text).map_err(|e| TreeError::Json {
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    })?;
    let Value::Object(map) = value else {
        return Err(TreeError::NotAnObject);
    };
    let mut entries = BTreeMap::new();
    for (path, content) in map {
        let Value::String(content) = content else {
            return Err(TreeError::NonStringValue { path });
        };
        entries.insert(path, content);
    }
    let tree = FileTree {
        entries,
        root_label: DEFAULT_ROOT_LABEL.to_owned(),
    };
    tree.check()?;
    Ok(tree)
}

/// All invariant violations plus missing required entries, as findings.
pub fn validate_tree(tree: &FileTree, directives: &GenerationDirectives) -> Vec<Finding> {
    let mut findings = Vec::new();
    for key in tree.entries.keys() {
        if let Err(reason) = check_path(key) {
            findings.push(Finding::error(
                key.escape_debug().to_string(),
                format!("unsafe path: {reason}"),
            ));
        }
    }
    for (file, nested) in all_conflicts(&tree.entries) {
        findings.push(Finding::error(
            file.clone(),
            format!("path is both a file and the directory of \"{nested}\""),
        ));
    }
    if !COMPOSE_FILE_NAMES
        .iter()
        .any(|name| tree.entries.contains_key(*name))
    {
        findings.push(Finding::error("", "missing container descriptor"));
    }
    if !directives.entry_points.is_empty()
        && !directives
            .entry_points
            .iter()
            .any(|p| tree.entries.contains_key(p))
    {
        findings.push(Finding::error(
            "",
            format!(
                "missing entry point (expected one of: {})",
                directives.entry_points.join(", ")
            ),
        ));
    }
    findings
}

/// `base` overridden by `patch`, minus `deletions`.
pub fn merge_update(
    base: &FileTree,
    patch: &FileTree,
    deletions: &[String],
) -> Result<FileTree, TreeError> {
    let mut merged = base.clone();
    for (path, content) in &patch.entries {
        merged.entries.insert(path.clone(), content.clone());
    }
    for path in deletions {
        if !base.entries.contains_key(path) {
            return Err(TreeError::UnknownDeletion(path.clone()));
        }
        merged.entries.remove(path);
    }
    merged.check()?;
    Ok(merged)
}
