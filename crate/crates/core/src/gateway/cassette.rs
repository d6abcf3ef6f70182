//! Cassette files: one `{"fingerprint": ..., "response_turn": ...}` JSON
//! record per line, UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatTurn, Fingerprint, GatewayError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: Fingerprint,
    pub response_turn: ChatTurn,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    entries: BTreeMap<Fingerprint, ChatTurn>,
}

impl Cassette {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, fingerprint: &Fingerprint) -> Option<&ChatTurn> {
        self.entries.get(fingerprint)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Fingerprint, &ChatTurn)> {
        self.entries.iter()
    }
}

pub fn cassette_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}.cassette.jsonl"))
}

/// Write `exchanges` as a cassette for `session_id` under `dir`.
///
/// Repeated identical exchanges collapse into one entry; the same
/// fingerprint with two different responses is refused.
pub fn record_cassette(
    dir: &Path,
    session_id: &str,
    exchanges: &[(Fingerprint, ChatTurn)],
) -> Result<PathBuf, GatewayError> {
    if exchanges.is_empty() {
        return Err(GatewayError::Cassette("no exchanges to record".into()));
    }
    let mut seen: BTreeMap<&Fingerprint, &ChatTurn> = BTreeMap::new();
    let mut ordered: Vec<CassetteEntry> = Vec::new();
    for (fp, turn) in exchanges {
        match seen.get(fp) {
            Some(prev) if *prev == turn => continue,
            Some(_) => {
                return Err(GatewayError::Cassette(format!(
                    "fingerprint {fp} recorded with two different responses"
                )))
            }
            None => {
                seen.insert(fp, turn);
                ordered.push(CassetteEntry {
                    fingerprint: fp.clone(),
                    response_turn: turn.clone(),
                });
            }
        }
    }

    let path = cassette_path(dir, session_id);
    let mut out = Vec::new();
    for entry in &ordered {
        serde_json::to_writer(&mut out, entry).expect("entry serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(&path)
        .map_err(|e| GatewayError::Cassette(format!("cannot write {}: {e}", path.display())))?;
    file.write_all(&out)
        .map_err(|e| GatewayError::Cassette(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn load_cassette(path: &Path) -> Result<Cassette, GatewayError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GatewayError::Cassette(format!("cannot read {}: {e}", path.display())))?;
    let mut cassette = Cassette::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(line).map_err(|e| {
            GatewayError::Cassette(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        if let Some(prev) = cassette.entries.get(&entry.fingerprint) {
            if *prev != entry.response_turn {
                return Err(GatewayError::Cassette(format!(
                    "{} line {}: conflicting entry for {}",
                    path.display(),
                    i + 1,
                    entry.fingerprint
                )));
            }
        }
        cassette.entries.insert(entry.fingerprint, entry.response_turn);
    }
    Ok(cassette)
}

/// Serves responses by exact fingerprint match.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    cassette: Cassette,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette }
    }
}

impl ChatBackend for ReplayBackend {
    fn respond(&self, _request: &ChatRequest<'_>, fingerprint: &Fingerprint) -> Result<ChatTurn, GatewayError> {
        self.cassette
            .get(fingerprint)
            .cloned()
            .ok_or_else(|| GatewayError::CassetteMiss {
                fingerprint: fingerprint.clone(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(s: &str) -> Fingerprint {
        Fingerprint(s.to_owned())
    }

    #[test]
    fn single_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ex = vec![(fp("a"), ChatTurn::assistant("one"))];
        let path = record_cassette(dir.path(), "s1", &ex).unwrap();
        let c = load_cassette(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(&fp("a")), Some(&ex[0].1));
    }

    #[test]
    fn three_distinct_all_retrievable() {
        let dir = tempfile::tempdir().unwrap();
        let ex: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|k| (fp(k), ChatTurn::assistant(format!("reply {k}"))))
            .collect();
        let c = load_cassette(&record_cassette(dir.path(), "s", &ex).unwrap()).unwrap();
        assert_eq!(c.len(), 3);
        for (f, t) in &ex {
            assert_eq!(c.get(f), Some(t));
        }
    }

    #[test]
    fn duplicate_with_different_response_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ex = vec![
            (fp("a"), ChatTurn::assistant("one")),
            (fp("a"), ChatTurn::assistant("two")),
        ];
        assert!(matches!(
            record_cassette(dir.path(), "s", &ex),
            Err(GatewayError::Cassette(_))
        ));
        assert!(!cassette_path(dir.path(), "s").exists());
    }

    #[test]
    fn empty_and_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(record_cassette(dir.path(), "s", &[]).is_err());
        let ex = vec![(fp("a"), ChatTurn::assistant("one"))];
        assert!(record_cassette(&dir.path().join("missing/dir"), "s", &ex).is_err());
    }
}
