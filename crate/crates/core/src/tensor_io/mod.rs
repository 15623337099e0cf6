//! Interchange formats: NPY tensors, JSON Lines manifests, and CSV score and
//! correctness tables.
//!
//! Tensor rows are aligned to manifest order. Nothing here sorts by image id.

mod manifest;
mod npy;
mod tables;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use manifest::{
    load_manifest, manifest_to_string, parse_manifest, write_manifest, DatasetManifest, ManifestEntry,
    ManifestError, CLEAN,
};
pub use npy::{parse_npy, parse_npy_with, write_npy, FiniteMode, MAGIC};
pub use tables::{
    correctness_to_string, format_sig9, load_correctness, load_scores, parse_correctness, parse_scores,
    scores_to_string, write_correctness, write_scores, CorrectnessRecord, CorrectnessTable, RecordKey,
    ScoreRecord, ScoreTable, TableError,
};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic: expected \\x93NUMPY, found {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported npy version {major}.{minor} (only 1.0)")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("unsupported descr `{descr}` (only '<f4')")]
    UnsupportedDtype { descr: String },
    #[error("unsupported fortran_order: True (only C order)")]
    UnsupportedOrder,
    #[error("bad header field `{field}`: {reason}")]
    BadHeader { field: &'static str, reason: String },
    #[error("truncated header: need {expected} bytes, have {got}")]
    TruncatedHeader { expected: usize, got: usize },
    #[error("truncated payload: shape needs {expected} bytes, have {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("tensor has {rows} rows but manifest has {expected} entries")]
    Alignment { rows: usize, expected: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl TensorF32 {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(TensorError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(TensorF32 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    rows: rows.len(),
                    cols,
                    len: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(TensorError::NonFinite {
                row: i / self.cols.max(1),
                col: i % self.cols.max(1),
            }),
        }
    }

    /// Row count must equal the number of manifest entries.
    pub fn check_aligned(&self, manifest: &DatasetManifest) -> Result<(), TensorError> {
        if self.rows != manifest.len() {
            return Err(TensorError::Alignment {
                rows: self.rows,
                expected: manifest.len(),
            });
        }
        Ok(())
    }
}

pub fn read_npy(path: &Path, mode: FiniteMode) -> Result<TensorF32, TensorError> {
    let bytes = std::fs::read(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_npy_with(&bytes, mode)
}

pub fn write_npy_file(t: &TensorF32, path: &Path) -> Result<(), TensorError> {
    std::fs::write(path, write_npy(t)).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })
}
