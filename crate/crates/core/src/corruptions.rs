//! Synthetic corruptions and clean/corrupted mixture datasets.
//!
//! Severity tables (index = severity - 1):
//!
//! | kind            | parameter                 | 1    | 2   | 3   | 4   | 5    |
//! |-----------------|---------------------------|------|-----|-----|-----|------|
//! | gaussian_noise  | sigma (8-bit units)       | 8    | 13  | 18  | 26  | 38   |
//! | shot_noise      | photon scale              | 60   | 25  | 12  | 5   | 3    |
//! | gaussian_blur   | kernel sigma (px)         | 1    | 2   | 3   | 4   | 6    |
//! | contrast        | factor around the mean    | 0.75 | 0.5 | 0.4 | 0.3 | 0.15 |
//! | brightness      | additive offset, clamped  | 25   | 45  | 65  | 85  | 110  |
//! | pixelate        | block size (px)           | 2    | 3   | 4   | 6   | 8    |

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::image_metrics::{decode_pnm, encode_pnm, ImageBuffer, ImageError};
use crate::rng;
use crate::tensor_io::{DatasetManifest, ManifestEntry, ManifestError};

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("unknown corruption kind `{0}`")]
    UnknownKind(String),
    #[error("severity {0} outside 1..=5")]
    InvalidSeverity(u8),
    #[error("invalid mixture policy: {0}")]
    InvalidPolicy(String),
    #[error("input manifest entry `{image_id}` is not clean ({corruption}, {severity})")]
    NonCleanInput {
        image_id: String,
        corruption: String,
        severity: u8,
    },
    #[error("missing image {0}")]
    MissingImage(PathBuf),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    GaussianBlur,
    Contrast,
    Brightness,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    /// Distortion parameter for a severity in 1..=5.
    pub fn parameter(self, severity: u8) -> Result<f64, CorruptionError> {
        if !(1..=5).contains(&severity) {
            return Err(CorruptionError::InvalidSeverity(severity));
        }
        let table: [f64; 5] = match self {
            CorruptionKind::GaussianNoise => [8.0, 13.0, 18.0, 26.0, 38.0],
            CorruptionKind::ShotNoise => [60.0, 25.0, 12.0, 5.0, 3.0],
            CorruptionKind::GaussianBlur => [1.0, 2.0, 3.0, 4.0, 6.0],
            CorruptionKind::Contrast => [0.75, 0.5, 0.4, 0.3, 0.15],
            CorruptionKind::Brightness => [25.0, 45.0, 65.0, 85.0, 110.0],
            CorruptionKind::Pixelate => [2.0, 3.0, 4.0, 6.0, 8.0],
        };
        Ok(table[usize::from(severity) - 1])
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = CorruptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorruptionError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

pub fn apply_corruption(img: &ImageBuffer, spec: &CorruptionSpec) -> Result<ImageBuffer, CorruptionError> {
    let param = spec.kind.parameter(spec.severity)?;
    let mut rng = rng::stream(spec.seed);
    let mut out = img.clone();
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let noise = Normal::new(0.0, param).expect("positive sigma");
            for v in &mut out.samples {
                *v = to_u8(f64::from(*v) + noise.sample(&mut rng));
            }
        }
        CorruptionKind::ShotNoise => {
            for v in &mut out.samples {
                let mean = f64::from(*v) / 255.0 * param;
                let photons = if mean > 0.0 {
                    Poisson::new(mean).expect("positive mean").sample(&mut rng)
                } else {
                    0.0
                };
                *v = to_u8(photons / param * 255.0);
            }
        }
        CorruptionKind::GaussianBlur => blur(&mut out, param),
        CorruptionKind::Contrast => {
            for c in 0..img.channels {
                let mean = channel_mean(img, c);
                for px in out.samples.chunks_exact_mut(img.channels) {
                    px[c] = to_u8((f64::from(px[c]) - mean) * param + mean);
                }
            }
        }
        CorruptionKind::Brightness => {
            for v in &mut out.samples {
                *v = to_u8(f64::from(*v) + param);
            }
        }
        CorruptionKind::Pixelate => pixelate(&mut out, param as usize),
    }
    Ok(out)
}

/// Round half away from zero, then clamp to the 8-bit range.
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn channel_mean(img: &ImageBuffer, c: usize) -> f64 {
    let sum: u64 = img
        .samples
        .chunks_exact(img.channels)
        .map(|px| u64::from(px[c]))
        .sum();
    sum as f64 / img.pixel_count() as f64
}

/// Separable Gaussian blur, kernel truncated at 3 sigma, edges clamped.
fn blur(img: &mut ImageBuffer, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();

    let (w, h, ch) = (img.width as isize, img.height as isize, img.channels);
    let src: Vec<f64> = img.samples.iter().map(|&v| f64::from(v)).collect();
    let idx = |x: isize, y: isize, c: usize| (y * w + x) as usize * ch + c;

    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                horiz[idx(x, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * src[idx((x + k as isize - radius).clamp(0, w - 1), y, c)])
                    .sum();
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * horiz[idx(x, (y + k as isize - radius).clamp(0, h - 1), c)])
                    .sum();
                img.samples[idx(x, y, c)] = to_u8(v);
            }
        }
    }
}

/// Replace each block with its mean. Block size is clamped to the image's shorter side.
fn pixelate(img: &mut ImageBuffer, block: usize) {
    let block = block.min(img.width).min(img.height).max(1);
    let ch = img.channels;
    for by in (0..img.height).step_by(block) {
        for bx in (0..img.width).step_by(block) {
            let ys = by..(by + block).min(img.height);
            let xs = bx..(bx + block).min(img.width);
            let count = (ys.len() * xs.len()) as f64;
            for c in 0..ch {
                let mut sum = 0u64;
                for y in ys.clone() {
                    for x in xs.clone() {
                        sum += u64::from(img.samples[(y * img.width + x) * ch + c]);
                    }
                }
                let mean = to_u8(sum as f64 / count);
                for y in ys.clone() {
                    for x in xs.clone() {
                        img.samples[(y * img.width + x) * ch + c] = mean;
                    }
                }
            }
        }
    }
}

/// How a clean dataset is turned into a clean/corrupted mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    /// Corruption names. Any name is accepted for labelling; only the built-in kinds can be
    /// synthesized by [`corrupt_dataset`].
    pub corruptions: Vec<String>,
    pub severities: Vec<u8>,
    pub p_c: f64,
    pub seed: u64,
}

impl MixturePolicy {
    pub fn validate(&self) -> Result<(), CorruptionError> {
        if self.corruptions.is_empty() {
            return Err(CorruptionError::InvalidPolicy("empty corruption set".into()));
        }
        if self.corruptions.iter().any(|c| c.is_empty() || c == "clean") {
            return Err(CorruptionError::InvalidPolicy(
                "corruption names must be non-empty and not `clean`".into(),
            ));
        }
        if self.severities.is_empty() {
            return Err(CorruptionError::InvalidPolicy("empty severity set".into()));
        }
        if let Some(s) = self.severities.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(CorruptionError::InvalidSeverity(*s));
        }
        if !(0.0..=1.0).contains(&self.p_c) {
            return Err(CorruptionError::InvalidPolicy(format!(
                "p_c = {} outside [0, 1]",
                self.p_c
            )));
        }
        Ok(())
    }

    /// Deduplicated, sorted copies of the corruption and severity sets.
    fn sets(&self) -> (Vec<&str>, Vec<u8>) {
        let kinds: BTreeSet<&str> = self.corruptions.iter().map(String::as_str).collect();
        let sevs: BTreeSet<u8> = self.severities.iter().copied().collect();
        (kinds.into_iter().collect(), sevs.into_iter().collect())
    }
}

/// Number of corrupted entries: `floor(p_c * n + 0.5)`.
pub fn corrupted_count(n: usize, p_c: f64) -> usize {
    ((p_c * n as f64 + 0.5).floor() as usize).min(n)
}

const SELECT_STREAM: u64 = 0x5E1E_C7ED;
const ASSIGN_STREAM: u64 = 0xA551_6E00;

/// Label a fraction `p_c` of a clean manifest as corrupted.
///
/// Which ids are corrupted, and with what (kind, severity), depends only on the seed and each
/// image id, so shuffling the input changes nothing but output order. Output order follows input
/// order and paths are left untouched.
pub fn build_mixture(
    manifest: &DatasetManifest,
    policy: &MixturePolicy,
) -> Result<DatasetManifest, CorruptionError> {
    policy.validate()?;
    if let Some(e) = manifest.iter().find(|e| !e.is_clean()) {
        return Err(CorruptionError::NonCleanInput {
            image_id: e.image_id.clone(),
            corruption: e.corruption.clone(),
            severity: e.severity,
        });
    }
    let (kinds, sevs) = policy.sets();
    let n = manifest.len();
    let k = corrupted_count(n, policy.p_c);

    // The k ids with the smallest keyed hash are corrupted.
    let select_seed = rng::key_index(policy.seed, SELECT_STREAM);
    let mut order: Vec<(u64, &str, usize)> = manifest
        .iter()
        .enumerate()
        .map(|(i, e)| (rng::key_str(select_seed, &e.image_id), e.image_id.as_str(), i))
        .collect();
    order.sort_unstable();
    let mut corrupted = vec![false; n];
    for &(_, _, i) in &order[..k] {
        corrupted[i] = true;
    }

    let assign_seed = rng::key_index(policy.seed, ASSIGN_STREAM);
    let entries = manifest
        .iter()
        .zip(corrupted)
        .map(|(e, hit)| {
            if !hit {
                return e.clone();
            }
            let mut r = rng::stream(rng::key_str(assign_seed, &e.image_id));
            let kind = kinds[r.random_range(0..kinds.len())];
            let severity = sevs[r.random_range(0..sevs.len())];
            ManifestEntry {
                corruption: kind.to_string(),
                severity,
                ..e.clone()
            }
        })
        .collect();
    Ok(DatasetManifest::new(entries)?)
}

/// Per-image corruption seed.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    rng::key_str(rng::key_index(seed, 0x0C02_20B7), image_id)
}

/// Build the mixture, synthesize every corrupted image, and write it under `out_dir`.
///
/// Corrupted files land at `out_dir/<corruption>/<severity>/<original path>` and the returned
/// manifest points at them with absolute paths; clean entries keep their original paths
/// (relative to `in_dir`).
pub fn corrupt_dataset(
    manifest: &DatasetManifest,
    policy: &MixturePolicy,
    in_dir: &Path,
    out_dir: &Path,
) -> Result<DatasetManifest, CorruptionError> {
    let mixture = build_mixture(manifest, policy)?;
    let jobs: Vec<(usize, CorruptionKind)> = mixture
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.is_clean())
        .map(|(i, e)| e.corruption.parse().map(|k| (i, k)))
        .collect::<Result<_, _>>()?;
    if jobs.is_empty() {
        return Ok(mixture);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CorruptionError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let out_root = std::fs::canonicalize(out_dir).map_err(|source| CorruptionError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let written: Vec<(usize, String)> = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let e = &mixture.entries()[i];
            let src = in_dir.join(&e.path);
            let bytes = match std::fs::read(&src) {
                Ok(b) => b,
                Err(err) if err.kind() == std::io::ErrorKind::NotFound => {
                    return Err(CorruptionError::MissingImage(src))
                }
                Err(source) => return Err(CorruptionError::Io { path: src, source }),
            };
            let img = decode_pnm(&bytes).map_err(|source| CorruptionError::Image {
                path: src.clone(),
                source,
            })?;
            let spec = CorruptionSpec {
                kind,
                severity: e.severity,
                seed: image_seed(policy.seed, &e.image_id),
            };
            let out = apply_corruption(&img, &spec)?;
            let dst = out_root
                .join(kind.name())
                .join(e.severity.to_string())
                .join(&e.path);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|source| CorruptionError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            std::fs::write(&dst, encode_pnm(&out)).map_err(|source| CorruptionError::Io {
                path: dst.clone(),
                source,
            })?;
            Ok((i, dst.to_string_lossy().into_owned()))
        })
        .collect::<Result<_, _>>()?;

    let mut entries = mixture.into_entries();
    for (i, path) in written {
        entries[i].path = path;
    }
    Ok(DatasetManifest::new(entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_metrics::total_variation;
    use crate::tensor_io::manifest_to_string;
    use proptest::prelude::*;

    fn clean_manifest(n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| {
                    ManifestEntry::clean(format!("img{i:06}"), format!("img{i:06}.pgm"), (i % 10) as u32)
                })
                .collect(),
        )
        .unwrap()
    }

    fn policy(corruptions: &[&str], severities: &[u8], p_c: f64, seed: u64) -> MixturePolicy {
        MixturePolicy {
            corruptions: corruptions.iter().map(|s| s.to_string()).collect(),
            severities: severities.to_vec(),
            p_c,
            seed,
        }
    }

    fn textured(w: usize, h: usize) -> ImageBuffer {
        let samples = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                (64 + ((x / 4 + y / 4) % 2) * 128 + (x * 3 + y * 5) % 16) as u8
            })
            .collect();
        ImageBuffer::new(w, h, 1, samples).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!(matches!(
            "frost".parse::<CorruptionKind>(),
            Err(CorruptionError::UnknownKind(_))
        ));
    }

    #[test]
    fn parameter_tables_are_severity_monotone() {
        for k in CorruptionKind::ALL {
            let p: Vec<f64> = (1..=5).map(|s| k.parameter(s).unwrap()).collect();
            let increasing = p.windows(2).all(|w| w[0] < w[1]);
            let decreasing = p.windows(2).all(|w| w[0] > w[1]);
            assert!(increasing || decreasing, "{k}: {p:?}");
        }
        assert!(CorruptionKind::Contrast.parameter(0).is_err());
        assert!(CorruptionKind::Contrast.parameter(6).is_err());
    }

    #[test]
    fn gaussian_noise_matches_sigma_table() {
        let img = ImageBuffer::filled(256, 256, 1, 128);
        for s in 1..=5u8 {
            let sigma = CorruptionKind::GaussianNoise.parameter(s).unwrap();
            let spec = CorruptionSpec {
                kind: CorruptionKind::GaussianNoise,
                severity: s,
                seed: 42 + u64::from(s),
            };
            let out = apply_corruption(&img, &spec).unwrap();
            let n = out.samples.len() as f64;
            let mean = out.samples.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            let var = out
                .samples
                .iter()
                .map(|&v| (f64::from(v) - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            assert!((mean - 128.0).abs() < 1.0, "severity {s}: mean {mean}");
            assert!(
                (var.sqrt() - sigma).abs() < 0.1 * sigma,
                "severity {s}: sd {} vs {sigma}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn contrast_and_blur_fix_constant_images() {
        let img = ImageBuffer::filled(9, 7, 3, 77);
        for kind in [
            CorruptionKind::Contrast,
            CorruptionKind::GaussianBlur,
            CorruptionKind::Pixelate,
        ] {
            for s in 1..=5 {
                let out = apply_corruption(
                    &img,
                    &CorruptionSpec {
                        kind,
                        severity: s,
                        seed: 1,
                    },
                )
                .unwrap();
                assert_eq!(out, img, "{kind} severity {s}");
            }
        }
    }

    #[test]
    fn brightness_clamps() {
        let img = ImageBuffer::new(2, 1, 1, vec![10, 250]).unwrap();
        let spec = CorruptionSpec {
            kind: CorruptionKind::Brightness,
            severity: 5,
            seed: 0,
        };
        assert_eq!(apply_corruption(&img, &spec).unwrap().samples, vec![120, 255]);
    }

    #[test]
    fn pixelate_clamps_block_to_image() {
        let img = ImageBuffer::new(2, 2, 1, vec![0, 10, 20, 31]).unwrap();
        let spec = CorruptionSpec {
            kind: CorruptionKind::Pixelate,
            severity: 5,
            seed: 0,
        };
        let out = apply_corruption(&img, &spec).unwrap();
        assert_eq!((out.width, out.height, out.channels), (2, 2, 1));
        assert_eq!(out.samples, vec![15; 4]);
    }

    #[test]
    fn corruption_is_deterministic_and_shape_preserving() {
        let img = textured(17, 11);
        for kind in CorruptionKind::ALL {
            for s in 1..=5 {
                let spec = CorruptionSpec {
                    kind,
                    severity: s,
                    seed: 9,
                };
                let a = apply_corruption(&img, &spec).unwrap();
                let b = apply_corruption(&img, &spec).unwrap();
                assert_eq!(a, b);
                assert_eq!((a.width, a.height, a.channels), (17, 11, 1));
            }
        }
    }

    #[test]
    fn tv_distance_grows_with_severity() {
        let img = textured(48, 48);
        let clean_tv = total_variation(&img);
        for kind in [
            CorruptionKind::GaussianNoise,
            CorruptionKind::ShotNoise,
            CorruptionKind::GaussianBlur,
        ] {
            let means: Vec<f64> = (1..=5u8)
                .map(|s| {
                    (0..100)
                        .map(|t| {
                            let spec = CorruptionSpec {
                                kind,
                                severity: s,
                                seed: rng::key_index(u64::from(s), t),
                            };
                            (total_variation(&apply_corruption(&img, &spec).unwrap()) - clean_tv).abs()
                        })
                        .sum::<f64>()
                        / 100.0
                })
                .collect();
            assert!(means.windows(2).all(|w| w[0] <= w[1]), "{kind}: {means:?}");
        }
    }

    #[test]
    fn mixture_edge_cases() {
        let m = clean_manifest(100);
        assert_eq!(
            build_mixture(&m, &policy(&["gaussian_noise"], &[2], 0.0, 1)).unwrap(),
            m
        );
        let all = build_mixture(&m, &policy(&["gaussian_noise"], &[2], 1.0, 1)).unwrap();
        assert!(all
            .iter()
            .all(|e| e.corruption == "gaussian_noise" && e.severity == 2));
        assert_eq!(
            all.iter().map(|e| &e.image_id).collect::<Vec<_>>(),
            m.iter().map(|e| &e.image_id).collect::<Vec<_>>()
        );

        assert!(matches!(
            build_mixture(&all, &policy(&["contrast"], &[1], 0.5, 1)),
            Err(CorruptionError::NonCleanInput { .. })
        ));
        assert!(matches!(
            build_mixture(&m, &policy(&["contrast"], &[], 0.5, 1)),
            Err(CorruptionError::InvalidPolicy(_))
        ));
        assert!(matches!(
            build_mixture(&m, &policy(&[], &[1], 0.5, 1)),
            Err(CorruptionError::InvalidPolicy(_))
        ));
        assert!(matches!(
            build_mixture(&m, &policy(&["contrast"], &[1], 1.5, 1)),
            Err(CorruptionError::InvalidPolicy(_))
        ));
        assert!(matches!(
            build_mixture(&m, &policy(&["contrast"], &[6], 0.5, 1)),
            Err(CorruptionError::InvalidSeverity(6))
        ));
    }

    #[test]
    fn mixture_sweep_counts_at_imagenet_scale() {
        let m = clean_manifest(50_000);
        assert_eq!(corrupted_count(50_000, 0.20), 10_000);
        for n_pct in 1..=20u64 {
            let p = policy(
                &["gaussian_noise", "contrast"],
                &[1, 2, 3],
                n_pct as f64 / 100.0,
                n_pct,
            );
            let mix = build_mixture(&m, &p).unwrap();
            let corrupted = mix.iter().filter(|e| !e.is_clean()).count();
            assert_eq!(corrupted as u64, 500 * n_pct);
            assert!(mix.iter().all(|e| e.is_clean() || (1..=3).contains(&e.severity)));
        }
    }

    #[test]
    fn mixture_is_order_independent_and_reproducible() {
        let m = clean_manifest(500);
        let p = policy(&["gaussian_noise", "shot_noise", "pixelate"], &[1, 3], 0.3, 77);
        let a = build_mixture(&m, &p).unwrap();
        assert_eq!(
            manifest_to_string(&a),
            manifest_to_string(&build_mixture(&m, &p).unwrap())
        );

        let mut reversed = m.entries().to_vec();
        reversed.reverse();
        let b = build_mixture(&DatasetManifest::new(reversed).unwrap(), &p).unwrap();
        let mut b_entries = b.into_entries();
        b_entries.reverse();
        assert_eq!(b_entries, a.entries());
    }

    #[test]
    fn assignment_is_uniform_over_kinds_and_severities() {
        let m = clean_manifest(100_000);
        let kinds = ["brightness", "contrast", "gaussian_noise", "pixelate"];
        let sevs = [1u8, 2, 3];
        let mix = build_mixture(&m, &policy(&kinds, &sevs, 1.0, 2024)).unwrap();
        let mut counts = std::collections::HashMap::new();
        for e in mix.iter() {
            *counts.entry((e.corruption.clone(), e.severity)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 12);
        let expected = 100_000.0 / 12.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 11 degrees of freedom, alpha = 0.01
        assert!(chi2 < 24.725, "chi2 = {chi2}");
        let sd = (expected * (1.0 - 1.0 / 12.0)).sqrt();
        assert!(counts.values().all(|&c| (c as f64 - expected).abs() < 3.0 * sd));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mixture_count_is_exact(n in 0usize..100_000, p_c in 0.0f64..=1.0, seed in any::<u64>()) {
            let m = DatasetManifest::new(
                (0..n).map(|i| ManifestEntry::clean(format!("{i}"), "", 0)).collect(),
            ).unwrap();
            let mix = build_mixture(&m, &policy(&["contrast"], &[4], p_c, seed)).unwrap();
            let k = mix.iter().filter(|e| !e.is_clean()).count();
            prop_assert_eq!(k, (p_c * n as f64 + 0.5).floor() as usize);
        }
    }
}
