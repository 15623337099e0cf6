//! Command-line orchestration.
//!
//! Exit codes: 0 success, 1 a causal claim or simulation check failed, 2 usage,
//! configuration or data error, 3 I/O error.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::causal::{self, CausalError, Claim};
use crate::corruptions::{self, CorruptionError, CorruptionKind, MixturePolicy};
use crate::image_metrics::{self, ImageError};
use crate::plot;
use crate::predictability::{self, PredictConfig, PredictError, PredictReport};
use crate::stats::{self, BootstrapConfig, CorrelationReport, GroupSummary, ReportConfig, StatsError};
use crate::tensor_io::{
    self, CorrectnessTable, DatasetManifest, FiniteMode, ManifestError, ScoreTable, TableError, TensorError,
};
use crate::tg_iqa::{self, TgError};

pub const TV_METRIC: &str = "tv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}:{line}: {reason}")]
    Config {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Tg(#[from] TgError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Causal(#[from] CausalError),
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
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Io { .. }
            | CliError::Tensor(TensorError::Io { .. })
            | CliError::Manifest(ManifestError::Io { .. })
            | CliError::Table(TableError::Io { .. })
            | CliError::Corruption(CorruptionError::Io { .. } | CorruptionError::MissingImage(_))
            | CliError::Causal(CausalError::Io { .. }) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

#[derive(Parser, Debug)]
#[command(
    name = "qualaudit",
    version,
    about = "Audit image-quality scores against classifier correctness"
)]
pub struct Cli {
    /// Key-value config file with [common] and per-subcommand sections
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute quality scores into one consolidated CSV
    Score(ScoreArgs),
    /// Build clean/corrupted mixture manifests, optionally with AUC vs p_c
    Mixture(MixtureArgs),
    /// Synthesize corrupted images for a mixture
    Corrupt(CorruptArgs),
    /// Correlation table, predictability JSON and scatter plots
    Report(ReportArgs),
    /// Predictability only
    Predict(PredictArgs),
    /// Check the causal claim table and the simulation checks
    Dag(DagArgs),
    /// Sample a built-in structural causal model to CSV
    Simulate(SimulateArgs),
}

#[derive(clap::Args, Debug)]
pub struct ScoreArgs {
    /// Dataset manifest (JSONL); tensor rows and output rows follow its order
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root that manifest image paths are relative to
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// n x K pre-softmax logits, rows in manifest order
    #[arg(long)]
    pub logits: Option<PathBuf>,
    /// n x d image embeddings
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// K x d class prompt embeddings
    #[arg(long)]
    pub text_weights: Option<PathBuf>,
    #[arg(long, default_value_t = tg_iqa::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Metric families to compute: tv, tg, zsclip (default: whatever the inputs allow)
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// External score CSVs to merge in
    #[arg(long, value_delimiter = ',')]
    pub scores: Vec<PathBuf>,
    /// Accept NaN/Inf in tensors
    #[arg(long)]
    pub permissive: bool,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct MixtureArgs {
    /// Clean manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Corruption names (default: every built-in kind)
    #[arg(long, value_delimiter = ',')]
    pub corruptions: Vec<String>,
    /// Severity set each corrupted entry draws from
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub severities: Vec<u8>,
    /// Single corruption probability; when absent a sweep p_c = N/100 is run
    #[arg(long = "p-c")]
    pub p_c: Option<f64>,
    /// Sweep range `a..b` of N (inclusive)
    #[arg(long, default_value = "1..20")]
    pub sweep: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score CSVs covering every variant, for AUC vs p_c
    #[arg(long, value_delimiter = ',')]
    pub scores: Vec<PathBuf>,
    /// Correctness CSV, for AUC vs p_c
    #[arg(long)]
    pub correctness: Option<PathBuf>,
    /// Metrics to sweep (default: every metric in the score files)
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Models to sweep (default: every model in the correctness file)
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long, default_value_t = stats::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct CorruptArgs {
    /// Clean manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root that manifest image paths are relative to
    #[arg(long)]
    pub images: PathBuf,
    /// Corruption names (default: every built-in kind)
    #[arg(long, value_delimiter = ',')]
    pub corruptions: Vec<String>,
    /// Severity set each corrupted entry draws from
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub severities: Vec<u8>,
    #[arg(long = "p-c", default_value_t = 1.0)]
    pub p_c: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; the mixture manifest is written to `<out>/manifest.jsonl`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug, Clone)]
pub struct AnalysisArgs {
    /// Score CSVs (image_id,corruption,severity,metric,value)
    #[arg(long, value_delimiter = ',', required = true)]
    pub scores: Vec<PathBuf>,
    /// Correctness CSV (image_id,corruption,severity,model,correct)
    #[arg(long)]
    pub correctness: PathBuf,
    /// Metrics to analyse (default: every metric in the score files)
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Models to analyse (default: every model in the correctness file)
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Manifest supplying labels for per-label predictability
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = stats::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Also run per-image-id k-fold predictability
    #[arg(long)]
    pub per_image: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: AnalysisArgs,
    #[arg(long, default_value_t = stats::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
}

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: AnalysisArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DagAction {
    Check,
}

#[derive(clap::Args, Debug)]
pub struct DagArgs {
    #[arg(value_enum, default_value = "check")]
    pub action: DagAction,
    /// Rows per simulation check; 0 skips the simulations
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra claim `dag:A:B:Z1+Z2=true|false` (Z may be empty)
    #[arg(long)]
    pub claim: Vec<String>,
    /// Write the claim results as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value = "baseline_sim")]
    pub scm: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

/// Parsed config file: section -> key -> value, keys normalized to flag spelling.
pub type ConfigMap = BTreeMap<String, BTreeMap<String, (usize, String)>>;

pub fn parse_config(text: &str, path: &Path) -> Result<ConfigMap, CliError> {
    let mut out: ConfigMap = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let err = |reason: &str| CliError::Config {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            out.entry(name.trim().to_string()).or_default();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`"))?;
        let sec = section.clone().ok_or_else(|| err("key outside any [section]"))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(err("empty key"));
        }
        out.entry(sec)
            .or_default()
            .insert(key, (i + 1, v.trim().to_string()));
    }
    Ok(out)
}

fn flag_given(args: &[OsString], flag: &str) -> bool {
    let long = format!("--{flag}");
    let eq = format!("--{flag}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == long || a.starts_with(&eq)
    })
}

/// Appends `--key value` for every config entry whose flag is absent from `args`.
/// `[common]` keys apply where the subcommand accepts them; subcommand-section keys must exist.
pub fn apply_config(args: &[OsString], config: &ConfigMap, path: &Path) -> Result<Vec<OsString>, CliError> {
    let cmd = Cli::command();
    let sub_name = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().to_string())
        .find(|a| cmd.find_subcommand(a).is_some());
    let Some(sub_name) = sub_name else {
        return Ok(args.to_vec());
    };
    let sub = cmd.find_subcommand(&sub_name).expect("found above");
    let mut out = args.to_vec();
    let empty = BTreeMap::new();
    for (section, strict) in [("common", false), (sub_name.as_str(), true)] {
        for (key, (line, value)) in config.get(section).unwrap_or(&empty) {
            if key == "config" {
                continue;
            }
            let arg = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str()));
            let Some(arg) = arg else {
                if strict {
                    return Err(CliError::Config {
                        path: path.to_path_buf(),
                        line: *line,
                        reason: format!("`{sub_name}` has no option `{key}`"),
                    });
                }
                continue;
            };
            if flag_given(args, key)
                || (section == "common" && config.get(sub_name.as_str()).is_some_and(|s| s.contains_key(key)))
            {
                continue;
            }
            if matches!(arg.get_action(), ArgAction::SetTrue) {
                match value.as_str() {
                    "true" | "1" | "yes" => out.push(format!("--{key}").into()),
                    "false" | "0" | "no" => {}
                    _ => {
                        return Err(CliError::Config {
                            path: path.to_path_buf(),
                            line: *line,
                            reason: format!("`{key}` expects true or false"),
                        })
                    }
                }
            } else {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match run_inner(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().map(|a| a.to_string_lossy().to_string());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn run_inner(args: &[OsString]) -> Result<(), CliError> {
    let args = match config_path(args) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let cfg = parse_config(&text, &path)?;
            apply_config(args, &cfg, &path)?
        }
        None => args.to_vec(),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(()),
                _ => Err(CliError::Usage("invalid arguments".into())),
            };
        }
    };
    match cli.command {
        Command::Score(a) => cmd_score(&a),
        Command::Mixture(a) => cmd_mixture(&a),
        Command::Corrupt(a) => cmd_corrupt(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Dag(a) => cmd_dag(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn load_tensor(path: &Path, permissive: bool) -> Result<tensor_io::TensorF32, CliError> {
    let mode = if permissive {
        FiniteMode::Permissive
    } else {
        FiniteMode::Strict
    };
    Ok(tensor_io::read_npy(path, mode)?)
}

/// TV of every manifest image, in manifest order.
pub fn tv_scores(manifest: &DatasetManifest, root: &Path) -> Result<Vec<f64>, CliError> {
    manifest
        .entries()
        .par_iter()
        .map(|e| {
            let path = root.join(&e.path);
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let img = image_metrics::decode_pnm(&bytes).map_err(|source| CliError::Image { path, source })?;
            Ok(image_metrics::total_variation(&img))
        })
        .collect()
}

pub fn cmd_score(a: &ScoreArgs) -> Result<(), CliError> {
    let manifest = tensor_io::load_manifest(&a.manifest)?;
    let mut families = a.metrics.clone();
    if families.is_empty() {
        if a.images.is_some() {
            families.push(TV_METRIC.into());
        }
        if a.logits.is_some() {
            families.push("tg".into());
        }
        if a.embeddings.is_some() && a.text_weights.is_some() {
            families.push("zsclip".into());
        }
    }
    if families.is_empty() && a.scores.is_empty() {
        return Err(CliError::Usage(
            "nothing to score: pass --images, --logits, --embeddings/--text-weights or --scores".into(),
        ));
    }
    let mut table = ScoreTable::new();
    for family in &families {
        match family.as_str() {
            TV_METRIC => {
                let root = a
                    .images
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("metric tv needs --images".into()))?;
                for (e, v) in manifest.iter().zip(tv_scores(&manifest, root)?) {
                    table.push(e.key(), TV_METRIC, v)?;
                }
            }
            "tg" => {
                let path = a
                    .logits
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("metric tg needs --logits".into()))?;
                let logits = load_tensor(path, a.permissive)?;
                logits.check_aligned(&manifest)?;
                let triples = tg_iqa::strong_tg_scores(&logits)?;
                tg_iqa::append_scores(&mut table, &manifest, &triples, "tg")?;
            }
            "zsclip" => {
                let (Some(ep), Some(wp)) = (a.embeddings.as_deref(), a.text_weights.as_deref()) else {
                    return Err(CliError::Usage(
                        "metric zsclip needs --embeddings and --text-weights".into(),
                    ));
                };
                let z = load_tensor(ep, a.permissive)?;
                z.check_aligned(&manifest)?;
                let w = load_tensor(wp, a.permissive)?;
                let s = tg_iqa::zeroshot_similarities(
                    &tg_iqa::normalize_rows(&z)?,
                    &tg_iqa::normalize_rows(&w)?,
                )?;
                let triples = tg_iqa::zsclip_scores(&s, a.temperature)?;
                tg_iqa::append_scores(&mut table, &manifest, &triples, "zsclip")?;
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown metric family `{other}` (tv, tg, zsclip)"
                )))
            }
        }
    }
    for p in &a.scores {
        table.merge(tensor_io::load_scores(p)?)?;
    }
    write_file(&a.out, tensor_io::scores_to_string(&table))?;
    println!("wrote {} score rows to {}", table.len(), a.out.display());
    Ok(())
}

fn load_score_files(paths: &[PathBuf]) -> Result<ScoreTable, CliError> {
    let mut table = ScoreTable::new();
    for p in paths {
        table.merge(tensor_io::load_scores(p)?)?;
    }
    Ok(table)
}

fn default_corruptions(given: &[String]) -> Vec<String> {
    if given.is_empty() {
        CorruptionKind::ALL.iter().map(|k| k.name().to_string()).collect()
    } else {
        given.to_vec()
    }
}

/// Inclusive range `a..b`.
pub fn parse_sweep(s: &str) -> Result<std::ops::RangeInclusive<u32>, CliError> {
    let bad = || CliError::Usage(format!("sweep `{s}` is not of the form a..b"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (u32, u32) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    );
    if a > b || b > 100 {
        return Err(bad());
    }
    Ok(a..=b)
}

fn metrics_or_all(given: &[String], scores: &ScoreTable) -> Vec<String> {
    if given.is_empty() {
        scores.metrics()
    } else {
        given.to_vec()
    }
}

fn models_or_all(given: &[String], correctness: &CorrectnessTable) -> Vec<String> {
    if given.is_empty() {
        correctness.models()
    } else {
        given.to_vec()
    }
}

pub const SWEEP_HEADER: &str = "metric,model,p_c,n_corrupted,auc,auc_lo,auc_hi,ce,ce_lo,ce_hi";

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn cmd_mixture(a: &MixtureArgs) -> Result<(), CliError> {
    let manifest = tensor_io::load_manifest(&a.manifest)?;
    let corruptions = default_corruptions(&a.corruptions);
    let variants: Vec<(f64, u64, PathBuf)> = match a.p_c {
        Some(p) => vec![(p, a.seed, a.out.join("mixture.jsonl"))],
        None => parse_sweep(&a.sweep)?
            .map(|n| {
                (
                    f64::from(n) / 100.0,
                    crate::rng::key_index(a.seed, u64::from(n)),
                    a.out.join(format!("mixture_pc{n:03}.jsonl")),
                )
            })
            .collect(),
    };
    let mut mixtures = Vec::new();
    for (p_c, seed, path) in &variants {
        let policy = MixturePolicy {
            corruptions: corruptions.clone(),
            severities: a.severities.clone(),
            p_c: *p_c,
            seed: *seed,
        };
        let m = corruptions::build_mixture(&manifest, &policy)?;
        let corrupted = m.iter().filter(|e| !e.is_clean()).count();
        write_file(path, tensor_io::manifest_to_string(&m))?;
        println!("p_c={p_c:.2}  corrupted={corrupted}  -> {}", path.display());
        mixtures.push((*p_c, corrupted, m));
    }

    let Some(cpath) = &a.correctness else {
        return Ok(());
    };
    if a.scores.is_empty() {
        return Err(CliError::Usage("--correctness needs --scores".into()));
    }
    let scores = load_score_files(&a.scores)?;
    let correctness = tensor_io::load_correctness(cpath)?;
    let config = PredictConfig {
        split: predictability::SplitSpec {
            seed: a.seed,
            ..Default::default()
        },
        bootstrap: BootstrapConfig {
            resamples: a.resamples,
            seed: a.seed,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut csv = format!("{SWEEP_HEADER}\n");
    for metric in metrics_or_all(&a.metrics, &scores) {
        for model in models_or_all(&a.models, &correctness) {
            let all = predictability::join(&scores, &correctness, &metric, &model)?;
            let by_key: HashMap<_, _> = all.iter().map(|o| (o.key.clone(), o)).collect();
            let mut points = Vec::new();
            for (p_c, corrupted, m) in &mixtures {
                let obs: Vec<_> = m
                    .iter()
                    .filter_map(|e| by_key.get(&e.key()).map(|o| (*o).clone()))
                    .collect();
                let r = predictability::pointwise_from_observations(&obs, &config)?;
                csv.push_str(&format!(
                    "{metric},{model},{},{corrupted},{},{},{},{},{},{}\n",
                    tensor_io::format_sig9(*p_c),
                    tensor_io::format_sig9(r.auc),
                    tensor_io::format_sig9(r.auc_ci.0),
                    tensor_io::format_sig9(r.auc_ci.1),
                    tensor_io::format_sig9(r.ce),
                    tensor_io::format_sig9(r.ce_ci.0),
                    tensor_io::format_sig9(r.ce_ci.1),
                ));
                points.push((*p_c, r.auc));
            }
            let svg = plot::line_svg(&points, &format!("AUC vs p_c: {metric} / {model}"), "p_c", "AUC");
            write_file(
                &a.out.join(format!(
                    "auc_vs_pc_{}_{}.svg",
                    file_stem(&metric),
                    file_stem(&model)
                )),
                svg,
            )?;
        }
    }
    write_file(&a.out.join("auc_vs_pc.csv"), csv)?;
    Ok(())
}

pub fn cmd_corrupt(a: &CorruptArgs) -> Result<(), CliError> {
    let manifest = tensor_io::load_manifest(&a.manifest)?;
    let policy = MixturePolicy {
        corruptions: default_corruptions(&a.corruptions),
        severities: a.severities.clone(),
        p_c: a.p_c,
        seed: a.seed,
    };
    let m = corruptions::corrupt_dataset(&manifest, &policy, &a.images, &a.out)?;
    let written = m.iter().filter(|e| !e.is_clean()).count();
    let path = a.out.join("manifest.jsonl");
    write_file(&path, tensor_io::manifest_to_string(&m))?;
    println!("wrote {written} corrupted images; manifest {}", path.display());
    Ok(())
}

/// Everything `report` computes for one (metric, model) pair.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub metric: String,
    pub model: String,
    pub groups: Vec<GroupSummary>,
    /// Absent when only predictability was requested.
    pub correlation: Option<CorrelationReport>,
    pub predict: PredictReport,
    pub per_image: Option<predictability::GroupedResult>,
}

pub fn analysis_configs(a: &AnalysisArgs, permutations: usize) -> (ReportConfig, PredictConfig) {
    let bootstrap = BootstrapConfig {
        resamples: a.resamples,
        level: stats::DEFAULT_LEVEL,
        seed: a.seed,
    };
    (
        ReportConfig {
            bootstrap,
            permutations,
        },
        PredictConfig {
            split: predictability::SplitSpec {
                train_frac: 0.8,
                seed: a.seed,
            },
            bootstrap,
            folds: a.folds,
            ..Default::default()
        },
    )
}

/// Joined inputs of an analysis run.
pub struct AnalysisInputs<'a> {
    pub scores: &'a ScoreTable,
    pub correctness: &'a CorrectnessTable,
    pub metrics: &'a [String],
    pub models: &'a [String],
    /// Enables per-label predictability.
    pub labels: Option<&'a HashMap<String, u32>>,
    pub per_image: bool,
}

/// Correlation (when `report_cfg` is given) and predictability for every (metric, model) pair.
pub fn analyse(
    inputs: &AnalysisInputs<'_>,
    report_cfg: Option<&ReportConfig>,
    predict_cfg: &PredictConfig,
) -> Result<Vec<PairOutcome>, CliError> {
    let mut out = Vec::new();
    for metric in inputs.metrics {
        for model in inputs.models {
            let groups = stats::group_means(inputs.scores, inputs.correctness, metric, model)?;
            let correlation = report_cfg
                .map(|cfg| stats::correlation_report(&groups, metric, model, cfg))
                .transpose()?;
            let obs = predictability::join(inputs.scores, inputs.correctness, metric, model)?;
            let point = predictability::pointwise_from_observations(&obs, predict_cfg)?;
            let per_label = inputs
                .labels
                .map(|l| predictability::per_label_from_observations(&obs, l, predict_cfg))
                .transpose()?;
            let per_image = inputs
                .per_image
                .then(|| predictability::per_image_from_observations(&obs, predict_cfg))
                .transpose()?;
            out.push(PairOutcome {
                metric: metric.clone(),
                model: model.clone(),
                groups,
                correlation,
                predict: PredictReport::new(metric, model, &point, per_label.as_ref()),
                per_image,
            });
        }
    }
    Ok(out)
}

fn predict_json(outcomes: &[PairOutcome]) -> String {
    let rows: Vec<serde_json::Value> = outcomes
        .iter()
        .map(|o| {
            let mut v = serde_json::to_value(&o.predict).expect("report serializes");
            if let Some(g) = &o.per_image {
                v["per_image"] = serde_json::to_value(g).expect("grouped result serializes");
            }
            v
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("json") + "\n"
}

/// Scores, correctness, selected metrics and models, and optional labels.
type LoadedInputs = (
    ScoreTable,
    CorrectnessTable,
    Vec<String>,
    Vec<String>,
    Option<HashMap<String, u32>>,
);

fn load_analysis_inputs(a: &AnalysisArgs) -> Result<LoadedInputs, CliError> {
    let scores = load_score_files(&a.scores)?;
    let correctness = tensor_io::load_correctness(&a.correctness)?;
    let metrics = metrics_or_all(&a.metrics, &scores);
    let models = models_or_all(&a.models, &correctness);
    if metrics.is_empty() || models.is_empty() {
        return Err(CliError::Usage("no metrics or models to analyse".into()));
    }
    let labels = a
        .manifest
        .as_deref()
        .map(tensor_io::load_manifest)
        .transpose()?
        .map(|m| predictability::labels_from_manifest(&m));
    Ok((scores, correctness, metrics, models, labels))
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let c = &a.common;
    let (scores, correctness, metrics, models, labels) = load_analysis_inputs(c)?;
    let (rcfg, pcfg) = analysis_configs(c, a.permutations);
    let inputs = AnalysisInputs {
        scores: &scores,
        correctness: &correctness,
        metrics: &metrics,
        models: &models,
        labels: labels.as_ref(),
        per_image: c.per_image,
    };
    let outcomes = analyse(&inputs, Some(&rcfg), &pcfg)?;
    let reports: Vec<CorrelationReport> = outcomes.iter().filter_map(|o| o.correlation.clone()).collect();
    write_file(&c.out.join("correlation.csv"), stats::reports_to_csv(&reports))?;
    write_file(&c.out.join("predictability.json"), predict_json(&outcomes))?;
    for o in &outcomes {
        let svg = plot::scatter_svg(
            &o.groups,
            &format!("Accuracy vs {}: {}", o.metric, o.model),
            &format!("mean {}", o.metric),
            "accuracy",
        );
        write_file(
            &c.out.join(format!(
                "scatter_{}_{}.svg",
                file_stem(&o.metric),
                file_stem(&o.model)
            )),
            svg,
        )?;
        let Some(r) = &o.correlation else { continue };
        println!(
            "{:<14} {:<12} groups={:<3} |KRCC|={:.3} |SRCC|={:.3} |PLCC|={:.3} AUC={:.3} CE={:.3}",
            o.metric,
            o.model,
            r.n_groups,
            r.krcc.value,
            r.srcc.value,
            r.plcc.value,
            o.predict.auc,
            o.predict.ce
        );
    }
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let c = &a.common;
    let (scores, correctness, metrics, models, labels) = load_analysis_inputs(c)?;
    let (_, pcfg) = analysis_configs(c, 0);
    let inputs = AnalysisInputs {
        scores: &scores,
        correctness: &correctness,
        metrics: &metrics,
        models: &models,
        labels: labels.as_ref(),
        per_image: c.per_image,
    };
    let outcomes = analyse(&inputs, None, &pcfg)?;
    write_file(&c.out.join("predictability.json"), predict_json(&outcomes))?;
    for o in &outcomes {
        let p = &o.predict;
        println!(
            "{:<14} {:<12} AUC={:.4} [{:.4}, {:.4}] CE={:.4} [{:.4}, {:.4}]",
            o.metric, o.model, p.auc, p.auc_ci[0], p.auc_ci[1], p.ce, p.ce_ci[0], p.ce_ci[1]
        );
    }
    Ok(())
}

/// `dag:A:B:Z1+Z2=true|false`; node lists use `+` between names.
pub fn parse_claim(s: &str) -> Result<Claim, CliError> {
    let bad = || CliError::Usage(format!("claim `{s}` is not `dag:A:B:Z=true|false`"));
    let (lhs, expected) = s.rsplit_once('=').ok_or_else(bad)?;
    let expected: bool = expected.trim().parse().map_err(|_| bad())?;
    let parts: Vec<&str> = lhs.split(':').collect();
    let [dag, a, b, z] = parts[..] else {
        return Err(bad());
    };
    fn list(v: &str) -> Vec<&str> {
        v.split('+').map(str::trim).filter(|x| !x.is_empty()).collect()
    }
    Ok(Claim::new(dag, &list(a), &list(b), &list(z), Some(expected)))
}

/// Monte Carlo bounds that hold at one million rows.
pub const ACE_BOUND: f64 = 0.005;
pub const NULL_AUC_BOUND: f64 = 0.01;
pub const SHARED_AUC_MIN: f64 = 0.6;
const BOUNDS_MIN_N: usize = 1_000_000;

pub fn cmd_dag(a: &DagArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut claims = causal::claim_table();
    for c in &a.claim {
        claims.push(parse_claim(c)?);
    }
    let results = causal::verify_claims_with(&causal::builtin_dags(), &claims)?;
    print!("{}", causal::format_claims(&results));
    println!("claims checked in {:.3} ms", start.elapsed().as_secs_f64() * 1e3);
    let mut failures = results.iter().filter(|r| r.passed() == Some(false)).count();
    if let Some(out) = &a.out {
        write_file(out, serde_json::to_string_pretty(&results).expect("json") + "\n")?;
    }

    if a.n > 0 {
        let scms = causal::builtin_scms();
        let assert_bounds = a.n >= BOUNDS_MIN_N;
        let base = causal::simulate(&scms["baseline_sim"], a.n, a.seed)?;
        let ace = causal::ace_estimate(&base, "Q", "M", "X")?;
        let null_auc = causal::stratified_auc(&base, "Q", "M", "X")?;
        let shared = causal::simulate(&scms["shared_z_sim"], a.n, crate::rng::key_index(a.seed, 1))?;
        let shared_auc = causal::stratified_auc(&shared, "Q", "M", "X")?;
        let checks = [
            ("baseline_sim |ACE|", ace.ace.abs(), ace.ace.abs() < ACE_BOUND),
            (
                "baseline_sim within-stratum AUC",
                null_auc.mean_auc,
                (null_auc.mean_auc - 0.5).abs() <= NULL_AUC_BOUND,
            ),
            (
                "shared_z_sim within-stratum AUC",
                shared_auc.mean_auc,
                shared_auc.mean_auc > SHARED_AUC_MIN,
            ),
        ];
        for (name, value, ok) in checks {
            let status = match (assert_bounds, ok) {
                (false, _) => "INFO",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            println!("{status}  {name} = {value:.5}  (n={})", a.n);
            if assert_bounds && !ok {
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(CliError::ChecksFailed(failures));
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let scms = causal::builtin_scms();
    let spec = scms.get(a.scm.as_str()).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown scm `{}` (have: {})",
            a.scm,
            scms.keys().copied().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let frame = causal::simulate(spec, a.n, a.seed)?;
    frame.write_csv(&a.out)?;
    println!("wrote {} rows to {}", frame.rows, a.out.display());
    Ok(())
}
