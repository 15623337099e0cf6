//! Point-wise predictability of model correctness from a quality score.
//!
//! A one-feature logistic regression `P(M = 1 | Q)` is fit on training images and
//! scored on held-out images by AUC and cross-entropy. Splits and folds are
//! always by image id, so corruption variants of one image never straddle a split.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rng;
use crate::stats::{self, BootstrapConfig, StatsError};
use crate::tensor_io::{CorrectnessTable, DatasetManifest, RecordKey, ScoreTable};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("only one class present in {0}")]
    SingleClass(&'static str),
    #[error("logistic regression did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} observations, got {got}")]
    TooFewObservations { min: usize, got: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("label {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },
    #[error("no keys shared by metric `{metric}` and model `{model}`")]
    EmptyJoin { metric: String, model: String },
    #[error("image `{0}` has no label in the manifest")]
    MissingLabel(String),
    #[error("every label was skipped ({0} labels lacked both classes or enough images)")]
    AllLabelsSkipped(usize),
    #[error("every image id was skipped ({0} ids lacked both classes or enough variants)")]
    AllIdsSkipped(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRegConfig {
    /// Penalty `λ/2 · w²` on the weight; the bias is unpenalized.
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-4,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRegModel {
    pub weight: f64,
    pub bias: f64,
    pub config: LogRegConfig,
    pub iterations: usize,
    /// Penalized objective at the start and after every accepted step; non-increasing.
    pub objective_trace: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn objective(q: &[f64], m: &[u8], w: f64, b: f64, l2: f64) -> f64 {
    let nll: f64 = q
        .iter()
        .zip(m)
        .map(|(&x, &y)| {
            let z = w * x + b;
            softplus(z) - f64::from(y) * z
        })
        .sum();
    nll + 0.5 * l2 * w * w
}

fn check_binary(q: &[f64], m: &[u8], what: &'static str) -> Result<(), PredictError> {
    if q.len() != m.len() {
        return Err(PredictError::LengthMismatch(q.len(), m.len()));
    }
    if let Some(i) = q.iter().position(|v| !v.is_finite()) {
        return Err(PredictError::NonFinite(i));
    }
    if let Some(i) = m.iter().position(|&y| y > 1) {
        return Err(PredictError::NotBinary {
            index: i,
            value: m[i],
        });
    }
    let pos = m.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == m.len() {
        return Err(PredictError::SingleClass(what));
    }
    Ok(())
}

/// Damping added to the Hessian diagonal. It changes step lengths only, never the optimum.
const HESSIAN_DAMPING: f64 = 1e-10;

/// Penalized maximum likelihood by Newton/IRLS with step halving, starting from zero.
pub fn fit_logreg(q: &[f64], m: &[u8], config: &LogRegConfig) -> Result<LogRegModel, PredictError> {
    if q.len() < 2 {
        return Err(PredictError::TooFewObservations { min: 2, got: q.len() });
    }
    check_binary(q, m, "training data")?;
    if !(config.l2 >= 0.0 && config.tol > 0.0) {
        return Err(PredictError::InvalidConfig(format!("{config:?}")));
    }
    let (mut w, mut b) = (0.0f64, 0.0f64);
    let mut obj = objective(q, m, w, b, config.l2);
    let mut trace = vec![obj];
    for it in 1..=config.max_iter {
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in q.iter().zip(m) {
            let p = sigmoid(w * x + b);
            let r = p - f64::from(y);
            let s = p * (1.0 - p);
            gw += r * x;
            gb += r;
            hww += s * x * x;
            hwb += s * x;
            hbb += s;
        }
        gw += config.l2 * w;
        hww += config.l2 + HESSIAN_DAMPING;
        hbb += HESSIAN_DAMPING;
        let det = hww * hbb - hwb * hwb;
        let (dw, db) = if det > 0.0 && det.is_finite() {
            ((hbb * gw - hwb * gb) / det, (hww * gb - hwb * gw) / det)
        } else {
            (gw / hww, gb / hbb)
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (nw, nb) = (w - t * dw, b - t * db);
            let nobj = objective(q, m, nw, nb, config.l2);
            if nobj <= obj {
                accepted = Some((nw, nb, nobj));
                break;
            }
            t *= 0.5;
        }
        let Some((nw, nb, nobj)) = accepted else {
            // No decrease representable in f64: already at the optimum to machine precision.
            return Ok(LogRegModel {
                weight: w,
                bias: b,
                config: *config,
                iterations: it,
                objective_trace: trace,
            });
        };
        let delta = (nw - w).abs().max((nb - b).abs());
        w = nw;
        b = nb;
        obj = nobj;
        trace.push(obj);
        if delta < config.tol {
            return Ok(LogRegModel {
                weight: w,
                bias: b,
                config: *config,
                iterations: it,
                objective_trace: trace,
            });
        }
    }
    Err(PredictError::NoConvergence {
        iterations: config.max_iter,
    })
}

/// `σ(w·q + b)` for every score.
pub fn predict_proba(model: &LogRegModel, q: &[f64]) -> Vec<f64> {
    q.iter()
        .map(|&x| sigmoid(model.weight * x + model.bias))
        .collect()
}

/// Mann–Whitney AUC, ties counted one half. Computed from doubled average ranks in integers.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, PredictError> {
    check_binary(scores, labels, "AUC input")?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += pos * (i + 1 + j) as u128;
        i = j;
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count() as u128;
    let n0 = n as u128 - n1;
    let u2 = rank_sum2 - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n1 * n0) as f64)
}

/// Mean binary cross-entropy in nats, probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn cross_entropy(probs: &[f64], labels: &[u8]) -> Result<f64, PredictError> {
    if probs.len() != labels.len() {
        return Err(PredictError::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(PredictError::TooFewObservations { min: 1, got: 0 });
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// One joined (score, correctness) observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub key: RecordKey,
    pub q: f64,
    pub m: u8,
}

/// Inner join of one metric with one model, sorted by key.
pub fn join(
    scores: &ScoreTable,
    correctness: &CorrectnessTable,
    metric: &str,
    model: &str,
) -> Result<Vec<Observation>, PredictError> {
    let q = scores.for_metric(metric);
    let mut out: Vec<Observation> = correctness
        .records()
        .iter()
        .filter(|r| r.model == model)
        .filter_map(|r| {
            q.get(&r.key).map(|&v| Observation {
                key: r.key.clone(),
                q: v,
                m: r.correct,
            })
        })
        .collect();
    if out.is_empty() {
        return Err(PredictError::EmptyJoin {
            metric: metric.to_string(),
            model: model.to_string(),
        });
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictConfig {
    pub split: SplitSpec,
    pub logreg: LogRegConfig,
    pub bootstrap: BootstrapConfig,
    pub folds: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            split: SplitSpec::default(),
            logreg: LogRegConfig::default(),
            bootstrap: BootstrapConfig::default(),
            folds: 5,
        }
    }
}

/// Training ids: the first `round(train_frac · n)` of the sorted distinct ids after a seeded shuffle.
pub fn train_ids(obs: &[Observation], split: &SplitSpec) -> Result<HashSet<String>, PredictError> {
    if !(0.0..=1.0).contains(&split.train_frac) {
        return Err(PredictError::InvalidConfig(format!(
            "train_frac {} outside [0, 1]",
            split.train_frac
        )));
    }
    let mut ids: Vec<&str> = obs.iter().map(|o| o.key.image_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut rng::stream(split.seed));
    let k = (split.train_frac * ids.len() as f64).round() as usize;
    Ok(ids[..k].iter().map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseResult {
    pub auc: f64,
    pub auc_ci: (f64, f64),
    pub ce: f64,
    pub ce_ci: (f64, f64),
    pub n_train: usize,
    pub n_test: usize,
    pub model: LogRegModel,
}

/// Fit on training ids and score held-out ids. Intervals bootstrap the test rows.
pub fn pointwise_from_observations(
    obs: &[Observation],
    config: &PredictConfig,
) -> Result<PointwiseResult, PredictError> {
    let train = train_ids(obs, &config.split)?;
    let (tr, te): (Vec<&Observation>, Vec<&Observation>) =
        obs.iter().partition(|o| train.contains(&o.key.image_id));
    let (tq, tm): (Vec<f64>, Vec<u8>) = tr.iter().map(|o| (o.q, o.m)).unzip();
    let (eq, em): (Vec<f64>, Vec<u8>) = te.iter().map(|o| (o.q, o.m)).unzip();
    check_binary(&eq, &em, "test split")?;
    let model = fit_logreg(&tq, &tm, &config.logreg)?;
    let probs = predict_proba(&model, &eq);
    let auc_value = auc(&probs, &em)?;
    let ce_value = cross_entropy(&probs, &em)?;

    let pairs: Vec<(f64, u8)> = probs.iter().copied().zip(em.iter().copied()).collect();
    let unzip = |s: &[(f64, u8)]| -> (Vec<f64>, Vec<u8>) { s.iter().copied().unzip() };
    let auc_ci = stats::bootstrap_ci(
        &pairs,
        |s| {
            let (p, y) = unzip(s);
            auc(&p, &y).ok()
        },
        &BootstrapConfig {
            seed: rng::key_index(config.bootstrap.seed, 1),
            ..config.bootstrap
        },
    )?;
    let ce_ci = stats::bootstrap_ci(
        &pairs,
        |s| {
            let (p, y) = unzip(s);
            cross_entropy(&p, &y).ok()
        },
        &BootstrapConfig {
            seed: rng::key_index(config.bootstrap.seed, 2),
            ..config.bootstrap
        },
    )?;
    Ok(PointwiseResult {
        auc: auc_value,
        auc_ci,
        ce: ce_value,
        ce_ci,
        n_train: tr.len(),
        n_test: te.len(),
        model,
    })
}

pub fn pointwise_predictability(
    scores: &ScoreTable,
    correctness: &CorrectnessTable,
    metric: &str,
    model: &str,
    config: &PredictConfig,
) -> Result<PointwiseResult, PredictError> {
    pointwise_from_observations(&join(scores, correctness, metric, model)?, config)
}

/// `[start, end)` ranges of `k` folds over `n` items: `n / k` each, the remainder in the last.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let size = n / k;
    (0..k)
        .map(|f| (f * size, if f + 1 == k { n } else { (f + 1) * size }))
        .collect()
}

/// AUC and CE on one held-out fold, or `None` when either side lacks a class.
fn fold_score(
    train: &[(f64, u8)],
    test: &[(f64, u8)],
    logreg: &LogRegConfig,
) -> Result<Option<(f64, f64)>, PredictError> {
    let (tq, tm): (Vec<f64>, Vec<u8>) = train.iter().copied().unzip();
    let (eq, em): (Vec<f64>, Vec<u8>) = test.iter().copied().unzip();
    let two_class = |m: &[u8]| m.contains(&0) && m.contains(&1);
    if !two_class(&tm) || !two_class(&em) {
        return Ok(None);
    }
    let model = fit_logreg(&tq, &tm, logreg)?;
    let p = predict_proba(&model, &eq);
    Ok(Some((auc(&p, &em)?, cross_entropy(&p, &em)?)))
}

/// Means and population standard deviations over the evaluated units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupedResult {
    pub mauc: f64,
    pub sigma_auc: f64,
    pub mce: f64,
    pub sigma_ce: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

fn summarize(values: &[(f64, f64)], skipped: usize) -> GroupedResult {
    let (a, c): (Vec<f64>, Vec<f64>) = values.iter().copied().unzip();
    GroupedResult {
        mauc: stats::mean(&a),
        sigma_auc: stats::std_dev(&a),
        mce: stats::mean(&c),
        sigma_ce: stats::std_dev(&c),
        evaluated: values.len(),
        skipped,
    }
}

/// `image_id -> label` from a manifest. Conflicting labels for one id keep the first.
pub fn labels_from_manifest(manifest: &DatasetManifest) -> HashMap<String, u32> {
    let mut out = HashMap::new();
    for e in manifest.iter() {
        out.entry(e.image_id.clone()).or_insert(e.label);
    }
    out
}

/// K-fold CV within each label, folds by image id. A label's score is its mean over
/// evaluable folds; labels with fewer ids than folds or no evaluable fold are skipped.
pub fn per_label_from_observations(
    obs: &[Observation],
    labels: &HashMap<String, u32>,
    config: &PredictConfig,
) -> Result<GroupedResult, PredictError> {
    let k = config.folds;
    if k < 2 {
        return Err(PredictError::InvalidConfig(format!("folds {k} < 2")));
    }
    let mut by_label: BTreeMap<u32, RowsById> = BTreeMap::new();
    for o in obs {
        let label = *labels
            .get(&o.key.image_id)
            .ok_or_else(|| PredictError::MissingLabel(o.key.image_id.clone()))?;
        by_label
            .entry(label)
            .or_default()
            .entry(o.key.image_id.as_str())
            .or_default()
            .push((o.q, o.m));
    }
    let groups: Vec<_> = by_label.into_values().collect();
    let per_label: Vec<Option<(f64, f64)>> = groups
        .par_iter()
        .map(|ids| -> Result<Option<(f64, f64)>, PredictError> {
            if ids.len() < k {
                return Ok(None);
            }
            let mut order: Vec<&Vec<(f64, u8)>> = ids.values().collect();
            order.shuffle(&mut rng::stream(config.split.seed));
            let mut scored = Vec::new();
            for (s, e) in fold_bounds(order.len(), k) {
                let test: Vec<(f64, u8)> = order[s..e].iter().flat_map(|v| v.iter().copied()).collect();
                let train: Vec<(f64, u8)> = order[..s]
                    .iter()
                    .chain(&order[e..])
                    .flat_map(|v| v.iter().copied())
                    .collect();
                if let Some(r) = fold_score(&train, &test, &config.logreg)? {
                    scored.push(r);
                }
            }
            if scored.is_empty() {
                return Ok(None);
            }
            let (a, c): (Vec<f64>, Vec<f64>) = scored.into_iter().unzip();
            Ok(Some((stats::mean(&a), stats::mean(&c))))
        })
        .collect::<Result<_, _>>()?;
    let values: Vec<(f64, f64)> = per_label.iter().flatten().copied().collect();
    let skipped = per_label.len() - values.len();
    if values.is_empty() {
        return Err(PredictError::AllLabelsSkipped(skipped));
    }
    Ok(summarize(&values, skipped))
}

pub fn per_label_predictability(
    scores: &ScoreTable,
    correctness: &CorrectnessTable,
    labels: &HashMap<String, u32>,
    metric: &str,
    model: &str,
    config: &PredictConfig,
) -> Result<GroupedResult, PredictError> {
    per_label_from_observations(&join(scores, correctness, metric, model)?, labels, config)
}

/// K-fold CV over the variants of each image id. Variants are shuffled by a stream keyed
/// on `(seed, image_id)`. Mean and deviation pool every evaluable (id, fold) pair;
/// `skipped` counts ids with no evaluable fold.
pub fn per_image_from_observations(
    obs: &[Observation],
    config: &PredictConfig,
) -> Result<GroupedResult, PredictError> {
    let k = config.folds;
    if k < 2 {
        return Err(PredictError::InvalidConfig(format!("folds {k} < 2")));
    }
    let mut by_id: BTreeMap<&str, Vec<(f64, u8)>> = BTreeMap::new();
    for o in obs {
        by_id.entry(o.key.image_id.as_str()).or_default().push((o.q, o.m));
    }
    let ids: Vec<(&str, Vec<(f64, u8)>)> = by_id.into_iter().collect();
    let per_id: Vec<Vec<(f64, f64)>> = ids
        .par_iter()
        .map(|(id, rows)| -> Result<Vec<(f64, f64)>, PredictError> {
            if rows.len() < k {
                return Ok(Vec::new());
            }
            let mut rows = rows.clone();
            rows.shuffle(&mut rng::stream(rng::key_str(config.split.seed, id)));
            let mut scored = Vec::new();
            for (s, e) in fold_bounds(rows.len(), k) {
                let train: Vec<(f64, u8)> = rows[..s].iter().chain(&rows[e..]).copied().collect();
                if let Some(r) = fold_score(&train, &rows[s..e], &config.logreg)? {
                    scored.push(r);
                }
            }
            Ok(scored)
        })
        .collect::<Result<_, _>>()?;
    let skipped = per_id.iter().filter(|v| v.is_empty()).count();
    let values: Vec<(f64, f64)> = per_id.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(PredictError::AllIdsSkipped(skipped));
    }
    Ok(summarize(&values, skipped))
}

pub fn per_image_kfold(
    scores: &ScoreTable,
    correctness: &CorrectnessTable,
    metric: &str,
    model: &str,
    config: &PredictConfig,
) -> Result<GroupedResult, PredictError> {
    per_image_from_observations(&join(scores, correctness, metric, model)?, config)
}

/// (score, correctness) rows keyed by image id.
type RowsById<'a> = BTreeMap<&'a str, Vec<(f64, u8)>>;

/// The JSON record written per (metric, model).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictReport {
    pub metric: String,
    pub model: String,
    pub auc: f64,
    pub auc_ci: [f64; 2],
    pub ce: f64,
    pub ce_ci: [f64; 2],
    pub mauc: Option<f64>,
    pub mauc_sigma: Option<f64>,
    pub skipped: usize,
}

impl PredictReport {
    pub fn new(metric: &str, model: &str, point: &PointwiseResult, grouped: Option<&GroupedResult>) -> Self {
        PredictReport {
            metric: metric.to_string(),
            model: model.to_string(),
            auc: point.auc,
            auc_ci: [point.auc_ci.0, point.auc_ci.1],
            ce: point.ce,
            ce_ci: [point.ce_ci.0, point.ce_ci.1],
            mauc: grouped.map(|g| g.mauc),
            mauc_sigma: grouped.map(|g| g.sigma_auc),
            skipped: grouped.map_or(0, |g| g.skipped),
        }
    }
}
