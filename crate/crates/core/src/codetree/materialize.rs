use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tree::{FileTree, TreeError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReport {
    pub files_written: usize,
    pub bytes_written: u64,
    /// Directories created by this run, relative to the workspace root.
    pub created_dirs: Vec<String>,
    pub skipped_identical: usize,
}

#[derive(Debug, Error)]
pub enum MaterializeError {
    #[error("tree rejected: {0}")]
    Invalid(#[from] TreeError),
    #[error("workspace root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("{path} resolves outside the workspace root")]
    Escape { path: String },
    #[error("I/O error at {path} after {} files written: {source}", .partial.files_written)]
    Io {
        path: String,
        #[source]
        source: io::Error,
        partial: WriteReport,
    },
}

/// Write every entry of `tree` under `root`.
///
/// Files whose on-disk bytes already equal the entry are left alone and
/// counted as skipped. Nothing outside `root` is touched: paths are checked
/// lexically by [`FileTree::check`] and symlinked parents are refused.
pub fn materialize(tree: &FileTree, root: &Path) -> Result<WriteReport, MaterializeError> {
    tree.check()?;
    if !root.is_dir() {
        return Err(MaterializeError::MissingRoot(root.to_path_buf()));
    }
    let canonical_root = root
        .canonicalize()
        .map_err(|_| MaterializeError::MissingRoot(root.to_path_buf()))?;

    let mut report = WriteReport::default();
    for (rel, content) in &tree.entries {
        let io_err = |source: io::Error, report: &WriteReport| MaterializeError::Io {
            path: rel.clone(),
            source,
            partial: report.clone(),
        };

        let segments: Vec<&str> = rel.split('/').collect();
        let mut dir = canonical_root.clone();
        for (depth, segment) in segments[..segments.len() - 1].iter().enumerate() {
            dir.push(segment);
            match fs::symlink_metadata(&dir) {
                Ok(meta) if meta.file_type().is_symlink() => {
                    return Err(MaterializeError::Escape { path: rel.clone() })
                }
                Ok(meta) if meta.is_dir() => {}
                Ok(_) => {
                    return Err(io_err(
                        io::Error::new(io::ErrorKind::AlreadyExists, "not a directory"),
                        &report,
                    ))
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    fs::create_dir(&dir).map_err(|e| io_err(e, &report))?;
                    report.created_dirs.push(segments[..=depth].join("/"));
                }
                Err(e) => return Err(io_err(e, &report)),
            }
        }

        let target = dir.join(segments[segments.len() - 1]);
        match fs::symlink_metadata(&target) {
            Ok(meta) if meta.file_type().is_symlink() => {
                return Err(MaterializeError::Escape { path: rel.clone() })
            }
            Ok(meta) if meta.is_file() => {
                let existing = fs::read(&target).map_err(|e| io_err(e, &report))?;
                if existing == content.as_bytes() {
                    report.skipped_identical += 1;
                    continue;
                }
            }
            Ok(_) => {
                return Err(io_err(
                    io::Error::new(io::ErrorKind::AlreadyExists, "path exists and is not a file"),
                    &report,
                ))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(e, &report)),
        }
        fs::write(&target, content.as_bytes()).map_err(|e| io_err(e, &report))?;
        report.files_written += 1;
        report.bytes_written += content.len() as u64;
    }
    Ok(report)
}

/// Read a previously materialized tree back from disk, limited to `paths`.
pub fn read_back(root: &Path, paths: &[String]) -> io::Result<FileTree> {
    let mut tree = FileTree::new();
    for p in paths {
        let content = fs::read_to_string(root.join(p))?;
        tree.entries.insert(p.clone(), content);
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> FileTree {
        FileTree::from_entries([
            ("docker-compose.yml", "services:\n  web: {}\n"),
            ("server/index.js", "require('./app');\n"),
            ("server/app.js", "module.exports = {};\n"),
            ("server/routes/products.js", "// routes\n"),
            ("server/package.json", "{}\n"),
        ])
    }

    #[test]
    fn writes_then_skips() {
        let dir = tempfile::tempdir().unwrap();
        let first = materialize(&five(), dir.path()).unwrap();
        assert_eq!(first.files_written, 5);
        assert_eq!(first.skipped_identical, 0);
        assert_eq!(first.created_dirs, vec!["server", "server/routes"]);
        let second = materialize(&five(), dir.path()).unwrap();
        assert_eq!(second.files_written, 0);
        assert_eq!(second.bytes_written, 0);
        assert_eq!(second.skipped_identical, 5);
        assert!(second.created_dirs.is_empty());
    }

    #[test]
    fn empty_tree_all_zero() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            materialize(&FileTree::new(), dir.path()).unwrap(),
            WriteReport::default()
        );
    }

    #[test]
    fn changed_file_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        materialize(&five(), dir.path()).unwrap();
        let mut t = five();
        t.entries.insert("server/app.js".into(), "changed".into());
        let r = materialize(&t, dir.path()).unwrap();
        assert_eq!((r.files_written, r.skipped_identical), (1, 4));
        assert_eq!(
            fs::read_to_string(dir.path().join("server/app.js")).unwrap(),
            "changed"
        );
    }

    #[test]
    fn missing_root() {
        let dir = tempfile::tempdir().unwrap();
        let err = materialize(&five(), &dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, MaterializeError::MissingRoot(_)));
    }

    #[cfg(unix)]
    #[test]
    fn refuses_symlinked_directory() {
        let dir = tempfile::tempdir().unwrap();
        let outside = tempfile::tempdir().unwrap();
        std::os::unix::fs::symlink(outside.path(), dir.path().join("server")).unwrap();
        let err = materialize(&five(), dir.path()).unwrap_err();
        assert!(matches!(err, MaterializeError::Escape { .. }), "{err}");
        assert_eq!(fs::read_dir(outside.path()).unwrap().count(), 0);
    }

    #[test]
    fn io_error_reports_partial_progress() {
        let dir = tempfile::tempdir().unwrap();
        // A directory sits where a file must go.
        fs::create_dir_all(dir.path().join("server/package.json")).unwrap();
        let err = materialize(&five(), dir.path()).unwrap_err();
        match err {
            MaterializeError::Io { path, partial, .. } => {
                assert_eq!(path, "server/package.json");
                assert!(partial.files_written >= 1);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
