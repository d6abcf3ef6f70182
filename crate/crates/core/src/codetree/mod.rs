//! File trees as JSON: repair, parsing, validation, materialization and
//! snapshot versioning.

mod materialize;
mod repair;
mod tree;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use materialize::{materialize, read_back, MaterializeError, WriteReport};
pub use repair::{is_strict_json, repair_json, RepairReport, RepairRule};
pub use tree::{
    check_path, merge_update, parse_filetree, validate_tree, FileTree, PathViolation, TreeError,
    COMPOSE_FILE_NAMES, DEFAULT_ROOT_LABEL,
};

/// One persisted tree snapshot (`tree.v{N}.json` in the session workspace).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeVersion {
    pub version_index: u32,
    pub saved_at: DateTime<Utc>,
    /// Relative to the session workspace.
    pub file_path: PathBuf,
    pub digest: String,
    pub file_count: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn snapshot_file_name(version_index: u32) -> String {
    format!("tree.v{version_index}.json")
}

/// Persist `tree` as the next snapshot after `previous`.
pub fn write_snapshot(
    workspace: &Path,
    tree: &FileTree,
    previous: &[TreeVersion],
    saved_at: DateTime<Utc>,
) -> io::Result<TreeVersion> {
    let version_index = previous.last().map_or(1, |v| v.version_index + 1);
    let name = snapshot_file_name(version_index);
    let mut body = tree.to_json_pretty();
    body.push('\n');
    fs::write(workspace.join(&name), body.as_bytes())?;
    Ok(TreeVersion {
        version_index,
        saved_at,
        file_path: PathBuf::from(name),
        digest: sha256_hex(body.as_bytes()),
        file_count: tree.len(),
    })
}

pub fn load_snapshot(workspace: &Path, version: &TreeVersion, root_label: &str) -> io::Result<FileTree> {
    let text = fs::read_to_string(workspace.join(&version.file_path))?;
    parse_filetree(&text)
        .map(|t| t.with_root_label(root_label))
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
