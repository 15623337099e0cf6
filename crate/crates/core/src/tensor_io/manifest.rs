use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLEAN: &str = "clean";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line_no}: malformed entry: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("line {line_no}: corruption `{corruption}` with severity {severity} (clean iff severity 0)")]
    SeverityMismatch {
        line_no: usize,
        corruption: String,
        severity: u8,
    },
    #[error("line {line_no}: duplicate key ({image_id}, {corruption}, {severity})")]
    DuplicateKey {
        line_no: usize,
        image_id: String,
        corruption: String,
        severity: u8,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: String,
    pub label: u32,
    pub corruption: String,
    pub severity: u8,
}

impl ManifestEntry {
    pub fn clean(image_id: impl Into<String>, path: impl Into<String>, label: u32) -> Self {
        ManifestEntry {
            image_id: image_id.into(),
            path: path.into(),
            label,
            corruption: CLEAN.to_string(),
            severity: 0,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.corruption == CLEAN
    }

    pub fn key(&self) -> super::RecordKey {
        super::RecordKey::new(&self.image_id, &self.corruption, self.severity)
    }
}

/// Ordered dataset entries. Order is significant: tensor row `i` belongs to entry `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Validates severity/corruption consistency and key uniqueness.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        validate(entries.iter().enumerate().map(|(i, e)| (i + 1, e)))?;
        Ok(DatasetManifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ManifestEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ManifestEntry> {
        self.entries.iter()
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| ManifestError::MalformedLine {
            line_no: i + 1,
            reason: e.to_string(),
        })?;
        entries.push((i + 1, entry));
    }
    validate(entries.iter().map(|(l, e)| (*l, e)))?;
    Ok(DatasetManifest {
        entries: entries.into_iter().map(|(_, e)| e).collect(),
    })
}

fn validate<'a>(entries: impl Iterator<Item = (usize, &'a ManifestEntry)>) -> Result<(), ManifestError> {
    let mut seen = HashSet::new();
    for (line_no, e) in entries {
        if e.is_clean() != (e.severity == 0) || e.severity > 5 {
            return Err(ManifestError::SeverityMismatch {
                line_no,
                corruption: e.corruption.clone(),
                severity: e.severity,
            });
        }
        if !seen.insert((e.image_id.as_str(), e.corruption.as_str(), e.severity)) {
            return Err(ManifestError::DuplicateKey {
                line_no,
                image_id: e.image_id.clone(),
                corruption: e.corruption.clone(),
                severity: e.severity,
            });
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut out = String::new();
    for e in m.iter() {
        out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    let io = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(manifest_to_string(m).as_bytes()).map_err(io)
}
