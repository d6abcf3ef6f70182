//! OpenAPI documents: parsing, structural validation, CRUD enumeration,
//! semantic diffing and versioned saving.

mod diff;
mod model;
mod parse;
mod validate;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codetree::sha256_hex;
use crate::finding::{has_errors, Finding};

pub use diff::{diff_specs, Change, ChangeKind};
pub use model::{
    template_params, HttpMethod, OperationDesc, PathParam, SchemaKind, SchemaNode, SpecDocument,
};
pub use parse::parse_spec;
pub use validate::validate_spec;

pub const SPEC_FILE_NAME: &str = "openapi_spec.yml";

pub fn versioned_spec_name(version_index: u32) -> String {
    format!("openapi_spec.v{version_index}.yml")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecParseError {
    pub findings: Vec<Finding>,
}

impl SpecParseError {
    pub fn single(finding: Finding) -> Self {
        Self {
            findings: vec![finding],
        }
    }
}

impl fmt::Display for SpecParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.findings.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

impl std::error::Error for SpecParseError {}

/// Parse and validate in one go; the findings of both stages together.
pub fn check_spec_text(text: &str) -> Result<(SpecDocument, Vec<Finding>), Vec<Finding>> {
    let doc = parse_spec(text).map_err(|e| e.findings)?;
    let findings = validate_spec(&doc);
    Ok((doc, findings))
}

/// Rank used by [`list_crud_operations`].
fn crud_rank(op: &OperationDesc) -> u8 {
    match (op.method, op.targets_item()) {
        (HttpMethod::Post, _) => 0,
        (HttpMethod::Get, false) => 1,
        (HttpMethod::Get, true) => 2,
        (HttpMethod::Put | HttpMethod::Patch, _) => 3,
        (HttpMethod::Delete, _) => 4,
    }
}

/// Operations ordered create, list, read, update, delete; ties by path, then method.
pub fn list_crud_operations(doc: &SpecDocument) -> Vec<OperationDesc> {
    let mut ops = doc.operations.clone();
    ops.sort_by(|a, b| {
        crud_rank(a)
            .cmp(&crud_rank(b))
            .then_with(|| a.path.cmp(&b.path))
            .then_with(|| a.method.cmp(&b.method))
    });
    ops
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecVersion {
    pub version_index: u32,
    pub saved_at: DateTime<Utc>,
    /// Versioned copy, relative to the session workspace.
    pub file_path: PathBuf,
    pub digest: String,
}

#[derive(Debug, Error)]
pub enum SaveSpecError {
    #[error("specification rejected: {}", render(.0))]
    Invalid(Vec<Finding>),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn render(findings: &[Finding]) -> String {
    findings
        .iter()
        .filter(|f| f.is_error())
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl SaveSpecError {
    pub fn findings(&self) -> &[Finding] {
        match self {
            SaveSpecError::Invalid(f) => f,
            SaveSpecError::Io { .. } => &[],
        }
    }
}

/// Text written to disk for a spec: YAML input verbatim, JSON input
/// re-rendered as YAML, always newline-terminated.
pub fn spec_file_text(doc: &SpecDocument) -> String {
    let mut text = if doc.raw_text.trim_start().starts_with('{') {
        doc.to_yaml()
    } else {
        doc.raw_text.clone()
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

/// Validate `spec_text` and write it as the current and next versioned spec
/// file. Nothing is written when validation reports an error.
pub fn save_spec(
    spec_text: &str,
    workspace: &Path,
    versions: &mut Vec<SpecVersion>,
    saved_at: DateTime<Utc>,
) -> Result<(SpecVersion, Vec<Finding>), SaveSpecError> {
    let (doc, findings) = check_spec_text(spec_text).map_err(SaveSpecError::Invalid)?;
    if has_errors(&findings) {
        return Err(SaveSpecError::Invalid(findings));
    }
    let text = spec_file_text(&doc);
    let version_index = versions.last().map_or(1, |v| v.version_index + 1);
    let name = versioned_spec_name(version_index);
    for file in [name.as_str(), SPEC_FILE_NAME] {
        let path = workspace.join(file);
        fs::write(&path, text.as_bytes()).map_err(|source| SaveSpecError::Io { path, source })?;
    }
    let version = SpecVersion {
        version_index,
        saved_at,
        file_path: PathBuf::from(name),
        digest: sha256_hex(text.as_bytes()),
    };
    versions.push(version.clone());
    Ok((version, findings))
}

/// Current spec text of a workspace, if one was saved.
pub fn load_current_spec(workspace: &Path) -> io::Result<String> {
    fs::read_to_string(workspace.join(SPEC_FILE_NAME))
}
