//! Persistence: JSON-Lines record files, calibration artifacts, and the
//! atomic write helper every report writer goes through.
//!
//! Record file schema, one response per line:
//!
//! ```text
//! {"response_id": "...", "image_ref": "...", "prompt": "...",
//!  "claims": [{"claim_id": "...", "text": "...",
//!              "scores": {"logp_image": -3.2, ...},
//!              "errors": ["Object", ...]}]}
//! ```
//!
//! `errors` is absent for unannotated claims and `[]` for correct ones.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::calibration::{CalibrationArtifact, ARTIFACT_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::record::ResponseRecord;
use crate::scalar::Scalar;

/// Records loaded from one file plus what the loader had to say about them.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet<S> {
    pub records: Vec<ResponseRecord<S>>,
    /// Score channels present on every claim, sorted.
    pub score_fields: Vec<String>,
    pub warnings: Vec<String>,
}

impl<S> RecordSet<S> {
    pub fn claim_count(&self) -> usize {
        self.records.iter().map(|r| r.claims.len()).sum()
    }
}

/// Loads and validates a JSON-Lines record file.
///
/// When `spec` is given, every annotated error type must belong to it.
/// Score channels not shared by every claim are dropped with a warning.
pub fn load_records<S: Scalar>(
    path: impl AsRef<Path>,
    spec: Option<&LossSpec>,
) -> Result<RecordSet<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), path, spec)
}

/// Same as [`load_records`] over any reader; `origin` labels errors.
pub fn read_records<S: Scalar, R: BufRead>(
    reader: R,
    origin: &Path,
    spec: Option<&LossSpec>,
) -> Result<RecordSet<S>> {
    let mut records: Vec<ResponseRecord<S>> = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        };
        let record: ResponseRecord<S> =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate(spec).map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(record.response_id.clone()) {
            return Err(parse_err(format!(
                "duplicate response_id {:?}",
                record.response_id
            )));
        }
        records.push(record);
    }

    let mut warnings = Vec::new();
    let score_fields = shared_score_fields(&mut records, &mut warnings);
    Ok(RecordSet {
        records,
        score_fields,
        warnings,
    })
}

fn shared_score_fields<S>(records: &mut [ResponseRecord<S>], warnings: &mut Vec<String>) -> Vec<String> {
    let mut claims = records.iter().flat_map(|r| r.claims.iter());
    let Some(first) = claims.next() else {
        return Vec::new();
    };
    let mut union: BTreeSet<String> = first.scores.keys().cloned().collect();
    let mut shared = union.clone();
    for claim in claims {
        let keys: BTreeSet<String> = claim.scores.keys().cloned().collect();
        shared = shared.intersection(&keys).cloned().collect();
        union.extend(keys);
    }
    let dropped: Vec<&String> = union.difference(&shared).collect();
    if !dropped.is_empty() {
        warnings.push(format!(
            "score fields {dropped:?} are missing on some claims and were dropped; \
             keeping {:?}",
            shared
        ));
        for claim in records.iter_mut().flat_map(|r| r.claims.iter_mut()) {
            claim.scores.retain(|k, _| shared.contains(k));
        }
    }
    shared.into_iter().collect()
}

/// Writes records as JSON-Lines.
pub fn save_records<S: Scalar>(records: &[ResponseRecord<S>], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::data(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes any serializable value as JSON-Lines, one item per line.
pub fn save_json_lines<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::data(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn save_artifact<S: Scalar>(artifact: &CalibrationArtifact<S>, path: impl AsRef<Path>) -> Result<()> {
    save_json(artifact, path)
}

/// Loads an artifact, refusing files written by another format version.
pub fn load_artifact<S: Scalar>(path: impl AsRef<Path>) -> Result<CalibrationArtifact<S>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_artifact(&text, path)
}

pub fn parse_artifact<S: Scalar>(text: &str, origin: &Path) -> Result<CalibrationArtifact<S>> {
    let parse_err = |e: serde_json::Error| Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(ARTIFACT_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::Incompatible(format!(
                "{} has format_version {v}, this build reads {ARTIFACT_FORMAT_VERSION}",
                origin.display()
            )))
        }
        None => {
            return Err(Error::Incompatible(format!(
                "{} has no format_version field",
                origin.display()
            )))
        }
    }
    serde_json::from_value(value).map_err(parse_err)
}

/// Pretty-printed JSON, written atomically.
pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
