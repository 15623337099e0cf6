//! Task-guided quality scores.
//!
//! Strong guidance reads a trained classifier's logits; weak guidance (ZSCLIP) reads cosine
//! similarities between image embeddings and embedded class prompts. Both reduce a score vector
//! to three numbers: max probability, prediction entropy (nats), and the max raw score.
//! Neither path ever sees ground-truth labels.

use thiserror::Error;

use crate::tensor_io::{DatasetManifest, ScoreTable, TableError, TensorF32};

pub const TG_Q_P: &str = "tg.q_p";
pub const TG_Q_H: &str = "tg.q_h";
pub const TG_Q_L: &str = "tg.q_l";
pub const ZSCLIP_Q_P: &str = "zsclip.q_p";
pub const ZSCLIP_Q_H: &str = "zsclip.q_h";
pub const ZSCLIP_Q_L: &str = "zsclip.q_l";

/// CLIP-style inverse logit scale of 100.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum TgError {
    #[error("non-finite input at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("need at least {min} classes, got {got}")]
    TooFewClasses { min: usize, got: usize },
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("embedding dimension mismatch: images have {image_dim}, text weights have {text_dim}")]
    DimensionMismatch { image_dim: usize, text_dim: usize },
    #[error("{which} row {row} is not unit length (norm {norm})")]
    NotNormalized {
        which: &'static str,
        row: usize,
        norm: f64,
    },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
}

/// A probability vector produced by [`softmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityTriple {
    /// Max softmax probability, in `[1/K, 1]`.
    pub q_p: f64,
    /// Softmax entropy in nats, in `[0, ln K]`. High entropy means low quality.
    pub q_h: f64,
    /// Max raw score (logit or similarity).
    pub q_l: f64,
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector, TgError> {
    if logits.is_empty() {
        return Err(TgError::TooFewClasses { min: 1, got: 0 });
    }
    if let Some(col) = logits.iter().position(|v| !v.is_finite()) {
        return Err(TgError::NonFinite { row: 0, col });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / sum).collect()))
}

/// Max probability and entropy of `softmax(scores / temperature)`, plus max raw score.
///
/// Entropy is evaluated as `ln S - sum(p_i * d_i)` with `d_i = (z_i - max) / t` and
/// `S = sum(exp(d_i))`, which is `ln K` exactly for uniform input.
fn triple(scores: &[f32], temperature: f64) -> QualityTriple {
    let k = scores.len();
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for &z in scores {
        let d = (f64::from(z) - f64::from(max)) / temperature;
        let e = d.exp();
        sum += e;
        weighted += e * d;
    }
    let ln_k = (k as f64).ln();
    QualityTriple {
        q_p: 1.0 / sum,
        q_h: (sum.ln() - weighted / sum).clamp(0.0, ln_k),
        q_l: f64::from(max),
    }
}

fn check_finite(t: &TensorF32) -> Result<(), TgError> {
    match t.data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(TgError::NonFinite {
            row: i / t.cols.max(1),
            col: i % t.cols.max(1),
        }),
    }
}

/// Strong task-guided scores from an `n x K` logit matrix.
pub fn strong_tg_scores(logits: &TensorF32) -> Result<Vec<QualityTriple>, TgError> {
    if logits.cols < 2 {
        return Err(TgError::TooFewClasses {
            min: 2,
            got: logits.cols,
        });
    }
    check_finite(logits)?;
    Ok(logits.rows_iter().map(|r| triple(r, 1.0)).collect())
}

/// Scale each row to unit Euclidean norm.
pub fn normalize_rows(t: &TensorF32) -> Result<TensorF32, TgError> {
    check_finite(t)?;
    let mut data = Vec::with_capacity(t.data.len());
    for (i, row) in t.rows_iter().enumerate() {
        let norm = row
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm < 1e-12 {
            return Err(TgError::ZeroNormRow(i));
        }
        data.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    Ok(TensorF32 {
        rows: t.rows,
        cols: t.cols,
        data,
    })
}

fn check_unit_rows(t: &TensorF32, which: &'static str) -> Result<(), TgError> {
    for (row, r) in t.rows_iter().enumerate() {
        let norm = r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(TgError::NotNormalized { which, row, norm });
        }
    }
    Ok(())
}

/// Cosine similarities `s = z W^T` between unit image embeddings (`n x d`) and unit text
/// weights (`K x d`).
pub fn zeroshot_similarities(images: &TensorF32, text: &TensorF32) -> Result<TensorF32, TgError> {
    if images.cols != text.cols {
        return Err(TgError::DimensionMismatch {
            image_dim: images.cols,
            text_dim: text.cols,
        });
    }
    check_finite(images)?;
    check_finite(text)?;
    check_unit_rows(images, "image embedding")?;
    check_unit_rows(text, "text weight")?;
    let mut data = Vec::with_capacity(images.rows * text.rows);
    for z in images.rows_iter() {
        for w in text.rows_iter() {
            let dot: f64 = z.iter().zip(w).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            data.push(dot as f32);
        }
    }
    Ok(TensorF32 {
        rows: images.rows,
        cols: text.rows,
        data,
    })
}

/// Weak task-guided scores from an `n x K` similarity matrix. Probabilities use
/// `softmax(s / temperature)`; `q_l` is the untempered max similarity.
pub fn zsclip_scores(similarities: &TensorF32, temperature: f64) -> Result<Vec<QualityTriple>, TgError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(TgError::InvalidTemperature(temperature));
    }
    if similarities.cols < 1 {
        return Err(TgError::TooFewClasses { min: 1, got: 0 });
    }
    check_finite(similarities)?;
    Ok(similarities.rows_iter().map(|r| triple(r, temperature)).collect())
}

/// Metric names for a score family prefix (`tg` or `zsclip`).
pub fn metric_names(prefix: &str) -> [String; 3] {
    [
        format!("{prefix}.q_p"),
        format!("{prefix}.q_h"),
        format!("{prefix}.q_l"),
    ]
}

/// Append three score rows per manifest entry. `triples[i]` belongs to entry `i`.
pub fn append_scores(
    table: &mut ScoreTable,
    manifest: &DatasetManifest,
    triples: &[QualityTriple],
    prefix: &str,
) -> Result<(), TableError> {
    let [p, h, l] = metric_names(prefix);
    for (e, t) in manifest.iter().zip(triples) {
        let key = e.key();
        table.push(key.clone(), &p, t.q_p)?;
        table.push(key.clone(), &h, t.q_h)?;
        table.push(key, &l, t.q_l)?;
    }
    Ok(())
}
