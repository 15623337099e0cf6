//! Group aggregation, correlation coefficients, bootstrap intervals and permutation tests.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rng;
use crate::tensor_io::{format_sig9, CorrectnessTable, ScoreTable};

/// Resample count used throughout for 95% intervals.
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_PERMUTATIONS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no (image, corruption, severity) keys shared by metric `{metric}` and model `{model}`")]
    EmptyJoin { metric: String, model: String },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {min} groups, got {got}")]
    TooFewGroups { min: usize, got: usize },
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
}

/// One (corruption, severity) cell; `("clean", 0)` for unperturbed images.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct GroupKey {
    pub corruption: String,
    pub severity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub mean_q: f64,
    /// Accuracy within the group.
    pub mean_m: f64,
    pub n: usize,
}

/// Mean score and accuracy per (corruption, severity), over keys present in both tables.
/// Groups come back sorted by corruption name, then severity.
pub fn group_means(
    scores: &ScoreTable,
    correctness: &CorrectnessTable,
    metric: &str,
    model: &str,
) -> Result<Vec<GroupSummary>, StatsError> {
    let q = scores.for_metric(metric);
    let mut acc: BTreeMap<GroupKey, (f64, u64, usize)> = BTreeMap::new();
    for r in correctness.records().iter().filter(|r| r.model == model) {
        if let Some(&v) = q.get(&r.key) {
            let cell = acc
                .entry(GroupKey {
                    corruption: r.key.corruption.clone(),
                    severity: r.key.severity,
                })
                .or_insert((0.0, 0, 0));
            cell.0 += v;
            cell.1 += u64::from(r.correct);
            cell.2 += 1;
        }
    }
    if acc.is_empty() {
        return Err(StatsError::EmptyJoin {
            metric: metric.to_string(),
            model: model.to_string(),
        });
    }
    Ok(acc
        .into_iter()
        .map(|(key, (sq, sm, n))| GroupSummary {
            key,
            mean_q: sq / n as f64,
            mean_m: sm as f64 / n as f64,
            n,
        })
        .collect())
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::DegenerateInput("need at least 2 observations"));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i % x.len()));
    }
    Ok(())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation (divides by n).
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Sample Pearson linear correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // Positions i..j hold ranks i+1..=j.
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y)).map_err(|_| StatsError::DegenerateInput("all values tied"))
}

/// Kendall tau-b, `(C - D) / sqrt((n0 - n1)(n0 - n2))`, in O(n log n).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let n = x.len();
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as i64) * (n as i64 - 1) / 2;
    let tie_pairs = |eq: &dyn Fn(usize, usize) -> bool| -> i64 {
        let mut total = 0i64;
        let mut run = 1i64;
        for i in 1..n {
            if eq(i - 1, i) {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let n1 = tie_pairs(&|a, b| pairs[a].0 == pairs[b].0);
    let n3 = tie_pairs(&|a, b| pairs[a].0 == pairs[b].0 && pairs[a].1 == pairs[b].1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys);
    let n2 = {
        let mut run = 1i64;
        let mut total = 0i64;
        for i in 1..n {
            if ys[i] == ys[i - 1] {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    if n0 == n1 || n0 == n2 {
        return Err(StatsError::DegenerateInput("all values tied"));
    }
    let concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((concordant_minus_discordant as f64 / denom).clamp(-1.0, 1.0))
}

/// Sorts ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as i64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices for bootstrap resample `r`; a pure function of `(seed, r, n)`.
pub fn resample_indices(seed: u64, r: usize, n: usize) -> Vec<usize> {
    let mut g = rng::stream(rng::key_index(seed, r as u64));
    (0..n).map(|_| g.random_range(0..n)).collect()
}

/// Statistic evaluated on each resample; resamples where it returns `None` are dropped.
pub fn bootstrap_distribution<T, F>(values: &[T], statistic: F, resamples: usize, seed: u64) -> Vec<f64>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    let n = values.len();
    (0..resamples)
        .into_par_iter()
        .map(|r| {
            let sample: Vec<T> = resample_indices(seed, r, n)
                .into_iter()
                .map(|i| values[i].clone())
                .collect();
            statistic(&sample)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Percentile bootstrap interval.
pub fn bootstrap_ci<T, F>(
    values: &[T],
    statistic: F,
    config: &BootstrapConfig,
) -> Result<(f64, f64), StatsError>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if config.resamples == 0 || !(0.0..=1.0).contains(&config.level) {
        return Err(StatsError::InvalidConfig(format!(
            "resamples {} level {}",
            config.resamples, config.level
        )));
    }
    let mut dist = bootstrap_distribution(values, statistic, config.resamples, config.seed);
    if dist.is_empty() {
        return Err(StatsError::DegenerateInput(
            "statistic undefined on every resample",
        ));
    }
    dist.sort_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    Ok((quantile_sorted(&dist, tail), quantile_sorted(&dist, 1.0 - tail)))
}

/// Two-sided permutation p-value for `|stat(x, y)|`, permuting `y`.
/// Returns `(1 + #{|perm| >= |observed|}) / (1 + permutations)`.
pub fn permutation_p_value<F>(
    x: &[f64],
    y: &[f64],
    statistic: F,
    permutations: usize,
    seed: u64,
) -> Result<f64, StatsError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, StatsError> + Sync,
{
    let observed = statistic(x, y)?.abs();
    let hits: usize = (0..permutations)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(rng::key_index(seed, i as u64));
            let mut shuffled = y.to_vec();
            shuffled.shuffle(&mut g);
            // Relative slack keeps exact ties (e.g. identical permutations) counted.
            statistic(x, &shuffled)
                .map(|s| usize::from(s.abs() >= observed - 1e-12))
                .unwrap_or(0)
        })
        .sum();
    Ok((1 + hits) as f64 / (1 + permutations) as f64)
}

/// One coefficient with its interval and p-value. `value`, `lo` and `hi` are absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficient {
    pub signed: f64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub p: f64,
}

impl Coefficient {
    /// Half-width of the percentile interval; the `±` convention of the report.
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub model: String,
    pub n_groups: usize,
    pub krcc: Coefficient,
    pub srcc: Coefficient,
    pub plcc: Coefficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportConfig {
    pub bootstrap: BootstrapConfig,
    pub permutations: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            bootstrap: BootstrapConfig::default(),
            permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

type CoefFn = fn(&[f64], &[f64]) -> Result<f64, StatsError>;

/// Stream offsets so each coefficient's bootstrap and permutation draws are independent.
const STREAMS: [(&str, CoefFn, u64); 3] = [
    ("krcc", kendall_tau_b, 1),
    ("srcc", spearman, 2),
    ("plcc", pearson, 3),
];

/// |KRCC|, |SRCC| and |PLCC| between group mean score and group accuracy, each with a
/// bootstrap interval over groups and a permutation p-value.
pub fn correlation_report(
    summaries: &[GroupSummary],
    metric: &str,
    model: &str,
    config: &ReportConfig,
) -> Result<CorrelationReport, StatsError> {
    if summaries.len() < 3 {
        return Err(StatsError::TooFewGroups {
            min: 3,
            got: summaries.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = summaries.iter().map(|s| (s.mean_q, s.mean_m)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();

    let mut coefs = Vec::with_capacity(3);
    for (_, f, stream) in STREAMS {
        let signed = f(&x, &y)?;
        let boot = BootstrapConfig {
            seed: rng::key_index(config.bootstrap.seed, stream),
            ..config.bootstrap
        };
        let (lo, hi) = bootstrap_ci(
            &pairs,
            |s: &[(f64, f64)]| {
                let (a, b): (Vec<f64>, Vec<f64>) = s.iter().copied().unzip();
                f(&a, &b).ok().map(f64::abs)
            },
            &boot,
        )?;
        let p = permutation_p_value(
            &x,
            &y,
            f,
            config.permutations,
            rng::key_index(config.bootstrap.seed, 100 + stream),
        )?;
        coefs.push(Coefficient {
            signed,
            value: signed.abs(),
            lo,
            hi,
            p,
        });
    }
    Ok(CorrelationReport {
        metric: metric.to_string(),
        model: model.to_string(),
        n_groups: summaries.len(),
        krcc: coefs[0],
        srcc: coefs[1],
        plcc: coefs[2],
    })
}

pub const REPORT_HEADER: &str =
    "metric,model,krcc,krcc_lo,krcc_hi,krcc_p,srcc,srcc_lo,srcc_hi,srcc_p,plcc,plcc_lo,plcc_hi,plcc_p";

/// CSV rows under [`REPORT_HEADER`]. Coefficients are absolute values; intervals are
/// percentile bootstrap bounds of the absolute value.
pub fn reports_to_csv(reports: &[CorrelationReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        write!(out, "{},{}", r.metric, r.model).unwrap();
        for c in [&r.krcc, &r.srcc, &r.plcc] {
            for v in [c.value, c.lo, c.hi, c.p] {
                write!(out, ",{}", format_sig9(v)).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::RecordKey;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    /// O(n^2) tau-b by direct pair enumeration.
    fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let sx = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
                let sy = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
                match (sx, sy) {
                    (0, 0) => {
                        tx += 1;
                        ty += 1;
                    }
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        (c - d) as f64 / ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt()
    }

    fn rank_oracle(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    }

    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &affine).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let y = [2.0, 1.0, 4.0, 5.0];
        assert!((pearson(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs() < 1e-12);
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(StatsError::DegenerateInput("zero variance"))
        );
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        );
    }

    #[test]
    fn spearman_examples() {
        let x = [0.5, 1.0, 2.0, 7.0, 9.5];
        let mono: Vec<f64> = x.iter().map(|v: &f64| v.exp() + 3.0 * v).collect();
        assert_eq!(spearman(&x, &mono).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &rev).unwrap(), -1.0);
        let (x, y) = ([1.0, 2.0, 2.0, 3.0], [1.0, 3.0, 2.0, 4.0]);
        assert_eq!(rank_oracle(&x), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(
            spearman(&x, &y).unwrap(),
            pearson(&rank_oracle(&x), &rank_oracle(&y)).unwrap()
        );
        assert!(spearman(&[3.0; 4], &y).is_err());
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[4.0, 5.0, 9.0]).unwrap(), 1.0);
        // Pairs (1,2) concordant, (1,3) concordant, (2,3) discordant.
        assert!((kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let (x, y) = ([1.0, 1.0, 2.0], [1.0, 2.0, 3.0]);
        assert!((kendall_tau_b(&x, &y).unwrap() - kendall_oracle(&x, &y)).abs() < 1e-12);
        assert!(kendall_tau_b(&[2.0; 3], &y).is_err());
    }

    #[test]
    fn group_means_examples() {
        let mut s = ScoreTable::new();
        let mut c = CorrectnessTable::new();
        for (i, m) in [1u8, 1, 0, 0].into_iter().enumerate() {
            let key = RecordKey::new(&format!("i{i}"), "clean", 0);
            s.push(key.clone(), "tv", i as f64).unwrap();
            c.push(key, "resnet34", m).unwrap();
        }
        let g = group_means(&s, &c, "tv", "resnet34").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].mean_m, 0.5);
        assert_eq!(g[0].mean_q, 1.5);
        assert_eq!(g[0].n, 4);

        assert!(matches!(
            group_means(&s, &c, "tv", "swin_b"),
            Err(StatsError::EmptyJoin { .. })
        ));
        let mut other = CorrectnessTable::new();
        other
            .push(RecordKey::new("zzz", "clean", 0), "resnet34", 1)
            .unwrap();
        assert!(matches!(
            group_means(&s, &other, "tv", "resnet34"),
            Err(StatsError::EmptyJoin { .. })
        ));
    }

    #[test]
    fn seventy_five_groups() {
        let mut s = ScoreTable::new();
        let mut c = CorrectnessTable::new();
        for k in 0..15 {
            for sev in 1..=5u8 {
                for img in 0..3 {
                    let key = RecordKey::new(&format!("img{img}"), &format!("c{k:02}"), sev);
                    s.push(key.clone(), "arniqa", f64::from(sev)).unwrap();
                    c.push(key, "convnext_b", u8::from(img > 0)).unwrap();
                }
            }
        }
        let g = group_means(&s, &c, "arniqa", "convnext_b").unwrap();
        assert_eq!(g.len(), 75);
        assert!(g.iter().all(|s| s.n == 3 && (s.mean_m - 2.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn bootstrap_examples() {
        let cfg = BootstrapConfig {
            seed: 11,
            ..BootstrapConfig::default()
        };
        let mean_stat = |v: &[f64]| Some(mean(v));
        assert_eq!(bootstrap_ci(&[4.25; 30], mean_stat, &cfg).unwrap(), (4.25, 4.25));

        let balanced: Vec<f64> = (0..1000).map(|i| f64::from(i % 2)).collect();
        let (lo, hi) = bootstrap_ci(&balanced, mean_stat, &cfg).unwrap();
        assert!(lo < 0.5 && 0.5 < hi, "({lo}, {hi})");
        assert!(hi - lo < 0.07);

        let empty: [f64; 0] = [];
        assert_eq!(bootstrap_ci(&empty, mean_stat, &cfg), Err(StatsError::EmptyInput));
    }

    #[test]
    fn bootstrap_is_bit_reproducible() {
        let pairs: Vec<(f64, f64)> = (0..75)
            .map(|i| ((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let srcc = |s: &[(f64, f64)]| {
            let (a, b): (Vec<f64>, Vec<f64>) = s.iter().copied().unzip();
            spearman(&a, &b).ok()
        };
        let cfg = BootstrapConfig {
            seed: 5,
            ..BootstrapConfig::default()
        };
        let a = bootstrap_ci(&pairs, srcc, &cfg).unwrap();
        let b = bootstrap_ci(&pairs, srcc, &cfg).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn bootstrap_full_level_is_min_max() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64).sqrt()).collect();
        let cfg = BootstrapConfig {
            resamples: 200,
            level: 1.0,
            seed: 3,
        };
        let stat = |s: &[f64]| Some(mean(s));
        let dist = bootstrap_distribution(&v, stat, 200, 3);
        let (lo, hi) = bootstrap_ci(&v, stat, &cfg).unwrap();
        assert_eq!(lo, dist.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(hi, dist.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    fn summaries(q: &[f64], m: &[f64]) -> Vec<GroupSummary> {
        q.iter()
            .zip(m)
            .enumerate()
            .map(|(i, (&q, &m))| GroupSummary {
                key: GroupKey {
                    corruption: format!("c{i}"),
                    severity: 1,
                },
                mean_q: q,
                mean_m: m,
                n: 10,
            })
            .collect()
    }

    #[test]
    fn report_on_identical_series() {
        let v: Vec<f64> = (0..20).map(|i| 0.3 + 0.02 * i as f64).collect();
        let r = correlation_report(&summaries(&v, &v), "m", "f", &ReportConfig::default()).unwrap();
        for c in [r.krcc, r.srcc, r.plcc] {
            assert!((c.value - 1.0).abs() < 1e-12);
            assert!(c.p < 0.01);
        }
        assert!(matches!(
            correlation_report(&summaries(&v[..2], &v[..2]), "m", "f", &ReportConfig::default()),
            Err(StatsError::TooFewGroups { min: 3, got: 2 })
        ));
        let csv = reports_to_csv(&[r]);
        assert!(csv.starts_with(REPORT_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("m,f,1.00000000,"));
    }

    #[test]
    fn independent_groups_rarely_look_correlated() {
        let trials = 60;
        let cfg = ReportConfig {
            bootstrap: BootstrapConfig {
                resamples: 200,
                ..BootstrapConfig::default()
            },
            permutations: 500,
        };
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut quiet = 0;
        for t in 0..trials {
            let mut g = rng::stream(rng::key_index(99, t));
            let q: Vec<f64> = (0..75).map(|_| normal.sample(&mut g)).collect();
            let m: Vec<f64> = (0..75).map(|_| normal.sample(&mut g)).collect();
            let r = correlation_report(&summaries(&q, &m), "m", "f", &cfg).unwrap();
            if [r.krcc, r.srcc, r.plcc]
                .iter()
                .all(|c| c.value < 0.3 && c.p > 0.05)
            {
                quiet += 1;
            }
        }
        assert!(quiet as f64 >= 0.9 * trials as f64, "{quiet}/{trials}");
    }

    fn vec_with_ties() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..120).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..12).prop_map(f64::from), n),
                prop::collection::vec((0i32..12).prop_map(f64::from), n),
            )
        })
    }

    proptest! {
        #[test]
        fn kendall_matches_pair_counting((x, y) in vec_with_ties()) {
            match kendall_tau_b(&x, &y) {
                Ok(t) => prop_assert!((t - kendall_oracle(&x, &y)).abs() <= 1e-12),
                Err(_) => {
                    let tied = |v: &[f64]| v.iter().all(|a| *a == v[0]);
                    prop_assert!(tied(&x) || tied(&y));
                }
            }
        }

        #[test]
        fn spearman_is_pearson_of_ranks((x, y) in vec_with_ties()) {
            if let Ok(s) = spearman(&x, &y) {
                prop_assert_eq!(s, pearson(&rank_oracle(&x), &rank_oracle(&y)).unwrap());
            }
        }

        #[test]
        fn coefficients_symmetric_and_bounded((x, y) in vec_with_ties()) {
            for f in [pearson as CoefFn, spearman, kendall_tau_b] {
                if let (Ok(a), Ok(b)) = (f(&x, &y), f(&y, &x)) {
                    prop_assert!((-1.0..=1.0).contains(&a));
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn rank_coefficients_ignore_monotone_transforms((x, y) in vec_with_ties(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let tx: Vec<f64> = x.iter().map(|v| (v * 0.3).exp() * scale + v.powi(3)).collect();
            let ax: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
            if let Ok(k) = kendall_tau_b(&x, &y) {
                prop_assert!((kendall_tau_b(&tx, &y).unwrap() - k).abs() <= 1e-12);
            }
            if let Ok(s) = spearman(&x, &y) {
                prop_assert!((spearman(&tx, &y).unwrap() - s).abs() <= 1e-12);
            }
            if let Ok(p) = pearson(&x, &y) {
                prop_assert!((pearson(&ax, &y).unwrap() - p).abs() <= 1e-9);
            }
        }
    }
}
