//! Score and correctness CSV tables.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const SCORE_HEADER: [&str; 5] = ["image_id", "corruption", "severity", "metric", "value"];
pub const CORRECTNESS_HEADER: [&str; 5] = ["image_id", "corruption", "severity", "model", "correct"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: duplicate key {key} / {name}")]
    DuplicateKey {
        row: usize,
        key: RecordKey,
        name: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Identifies one image variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub image_id: String,
    pub corruption: String,
    pub severity: u8,
}

impl RecordKey {
    pub fn new(image_id: &str, corruption: &str, severity: u8) -> Self {
        RecordKey {
            image_id: image_id.to_string(),
            corruption: corruption.to_string(),
            severity,
        }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.image_id, self.corruption, self.severity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub key: RecordKey,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessRecord {
    pub key: RecordKey,
    pub model: String,
    pub correct: u8,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    records: Vec<ScoreRecord>,
    index: HashSet<(RecordKey, String)>,
}

impl PartialEq for ScoreTable {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: RecordKey, metric: &str, value: f64) -> Result<(), TableError> {
        if !self.index.insert((key.clone(), metric.to_string())) {
            return Err(TableError::DuplicateKey {
                row: self.records.len() + 1,
                key,
                name: metric.to_string(),
            });
        }
        self.records.push(ScoreRecord {
            key,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    /// Appends every record of `other`; duplicates are an error.
    pub fn merge(&mut self, other: ScoreTable) -> Result<(), TableError> {
        for r in other.records {
            self.push(r.key, &r.metric, r.value)?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct metric names in first-appearance order.
    pub fn metrics(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.metric.as_str()))
            .map(|r| r.metric.clone())
            .collect()
    }

    pub fn for_metric(&self, metric: &str) -> HashMap<RecordKey, f64> {
        self.records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.key.clone(), r.value))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorrectnessTable {
    records: Vec<CorrectnessRecord>,
    index: HashSet<(RecordKey, String)>,
}

impl PartialEq for CorrectnessTable {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl CorrectnessTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: RecordKey, model: &str, correct: u8) -> Result<(), TableError> {
        if correct > 1 {
            return Err(TableError::MalformedRow {
                row: self.records.len() + 1,
                reason: format!("correct must be 0 or 1, got {correct}"),
            });
        }
        if !self.index.insert((key.clone(), model.to_string())) {
            return Err(TableError::DuplicateKey {
                row: self.records.len() + 1,
                key,
                name: model.to_string(),
            });
        }
        self.records.push(CorrectnessRecord {
            key,
            model: model.to_string(),
            correct,
        });
        Ok(())
    }

    pub fn records(&self) -> &[CorrectnessRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn models(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.model.as_str()))
            .map(|r| r.model.clone())
            .collect()
    }

    pub fn for_model(&self, model: &str) -> HashMap<RecordKey, u8> {
        self.records
            .iter()
            .filter(|r| r.model == model)
            .map(|r| (r.key.clone(), r.correct))
            .collect()
    }
}

/// Formats with 9 significant digits, keeping trailing zeros (`0.567` -> `0.567000000`).
/// Magnitudes outside [1e-5, 1e15) use scientific notation.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    // `{:e}` rounds first, so the exponent already accounts for carries like 9.99999999996 -> 1e1.
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..15).contains(&exp) {
        let prec = (8 - exp).max(0) as usize;
        format!("{v:.prec$}")
    } else {
        sci
    }
}

fn table_io(path: &Path) -> impl Fn(std::io::Error) -> TableError + '_ {
    move |source| TableError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(row: usize, e: csv::Error) -> TableError {
    TableError::MalformedRow {
        row,
        reason: e.to_string(),
    }
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str; 5]) -> Result<(), TableError> {
    let header = rdr.headers().map_err(|e| csv_err(0, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(TableError::MalformedRow {
            row: 0,
            reason: format!(
                "expected header {}, got {}",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn parse_key(row: usize, rec: &csv::StringRecord) -> Result<RecordKey, TableError> {
    let severity = rec[2].parse::<u8>().map_err(|_| TableError::MalformedRow {
        row,
        reason: format!("bad severity `{}`", &rec[2]),
    })?;
    Ok(RecordKey::new(&rec[0], &rec[1], severity))
}

pub fn parse_scores(text: &str) -> Result<ScoreTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    check_header(&mut rdr, &SCORE_HEADER)?;
    let mut table = ScoreTable::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(row, e))?;
        let key = parse_key(row, &rec)?;
        let value = rec[4].parse::<f64>().map_err(|_| TableError::MalformedRow {
            row,
            reason: format!("bad value `{}`", &rec[4]),
        })?;
        table.push(key, &rec[3], value).map_err(|e| match e {
            TableError::DuplicateKey { key, name, .. } => TableError::DuplicateKey { row, key, name },
            other => other,
        })?;
    }
    Ok(table)
}

pub fn scores_to_string(table: &ScoreTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORE_HEADER).expect("in-memory write");
    for r in table.records() {
        w.write_record([
            r.key.image_id.as_str(),
            r.key.corruption.as_str(),
            &r.key.severity.to_string(),
            r.metric.as_str(),
            &format_sig9(r.value),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

pub fn load_scores(path: &Path) -> Result<ScoreTable, TableError> {
    parse_scores(&std::fs::read_to_string(path).map_err(table_io(path))?)
}

pub fn write_scores(table: &ScoreTable, path: &Path) -> Result<(), TableError> {
    std::fs::write(path, scores_to_string(table)).map_err(table_io(path))
}

pub fn parse_correctness(text: &str) -> Result<CorrectnessTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    check_header(&mut rdr, &CORRECTNESS_HEADER)?;
    let mut table = CorrectnessTable::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(row, e))?;
        let key = parse_key(row, &rec)?;
        let correct = match &rec[4] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(TableError::MalformedRow {
                    row,
                    reason: format!("correct must be 0 or 1, got `{other}`"),
                })
            }
        };
        table.push(key, &rec[3], correct).map_err(|e| match e {
            TableError::DuplicateKey { key, name, .. } => TableError::DuplicateKey { row, key, name },
            other => other,
        })?;
    }
    Ok(table)
}

pub fn correctness_to_string(table: &CorrectnessTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CORRECTNESS_HEADER).expect("in-memory write");
    for r in table.records() {
        w.write_record([
            r.key.image_id.as_str(),
            r.key.corruption.as_str(),
            &r.key.severity.to_string(),
            r.model.as_str(),
            &r.correct.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

pub fn load_correctness(path: &Path) -> Result<CorrectnessTable, TableError> {
    parse_correctness(&std::fs::read_to_string(path).map_err(table_io(path))?)
}

pub fn write_correctness(table: &CorrectnessTable, path: &Path) -> Result<(), TableError> {
    std::fs::write(path, correctness_to_string(table)).map_err(table_io(path))
}
