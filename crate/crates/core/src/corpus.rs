//! Record ingestion, tokenization and z-scoring of the numeric columns.
//!
//! Standard deviations use the `n - 1` divisor throughout the crate.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ENGLISH_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// One annotation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub outcome: f64,
    pub moderator: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub id: String,
    pub tokens: Vec<String>,
}

impl TokenizedDoc {
    /// True when nothing survived tokenization and stopword removal.
    pub fn is_flagged(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Which source columns feed each record field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    /// Provenance id column; when absent the 1-based data row number is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub outcome: String,
    pub moderator: String,
    /// Two group labels mapped to 0 and 1, in that order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moderator_levels: Option<[String; 2]>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: None,
            text: "text".into(),
            outcome: "outcome".into(),
            moderator: "moderator".into(),
            moderator_levels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    Csv,
    JsonLines,
}

impl InputFormat {
    /// `.jsonl`/`.ndjson` are JSON-lines; everything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => {
                InputFormat::JsonLines
            }
            _ => InputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingText,
    MissingOutcome,
    MissingModerator,
    NonNumericOutcome,
    NonNumericModerator,
    UnknownModeratorLevel,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub input_rows: usize,
    pub issues: Vec<RowIssue>,
}

impl DropReport {
    pub fn dropped(&self) -> usize {
        self.issues.len()
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.issues.iter().filter(|i| i.reason == reason).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub records: Vec<CorpusRecord>,
    pub drops: DropReport,
}

/// Raw cell values for one row before validation.
struct RawRow {
    id: Option<String>,
    text: Option<String>,
    outcome: Option<String>,
    moderator: Option<String>,
}

pub fn load_records_from_path(path: &Path, map: &ColumnMap) -> Result<LoadedCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::Ingest(format!("cannot open {}: {e}", path.display())))?;
    load_records(file, InputFormat::from_path(path), map)
}

pub fn load_records<R: Read>(source: R, format: InputFormat, map: &ColumnMap) -> Result<LoadedCorpus> {
    let rows = match format {
        InputFormat::Csv => read_csv_rows(source, map)?,
        InputFormat::JsonLines => read_jsonl_rows(source, map)?,
    };

    let mut records = Vec::with_capacity(rows.len());
    let mut drops = DropReport { input_rows: rows.len(), issues: Vec::new() };
    for (i, raw) in rows.into_iter().enumerate() {
        let row = i + 1;
        match validate_row(raw, row, map) {
            Ok(rec) => records.push(rec),
            Err((reason, detail)) => drops.issues.push(RowIssue { row, reason, detail }),
        }
    }
    Ok(LoadedCorpus { records, drops })
}

fn read_csv_rows<R: Read>(source: R, map: &ColumnMap) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source);
    let headers = reader.headers().map_err(|e| Error::Ingest(format!("unreadable CSV header: {e}")))?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Ingest(format!("column `{name}` not found in CSV header")))
    };
    let id_col = map.id.as_deref().map(find).transpose()?;
    let text_col = find(&map.text)?;
    let outcome_col = find(&map.outcome)?;
    let moderator_col = find(&map.moderator)?;

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest(format!("CSV parse error at data row {}: {e}", i + 1)))?;
        let cell = |c: usize| rec.get(c).map(str::to_owned);
        rows.push(RawRow {
            id: id_col.and_then(cell),
            text: cell(text_col),
            outcome: cell(outcome_col),
            moderator: cell(moderator_col),
        });
    }
    Ok(rows)
}

fn read_jsonl_rows<R: Read>(source: R, map: &ColumnMap) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Ingest(format!("JSON parse error on line {}: {e}", i + 1)))?;
        let obj = value.as_object().ok_or_else(|| Error::Ingest(format!("line {} is not a JSON object", i + 1)))?;
        let field = |name: &str| -> Option<String> {
            match obj.get(name)? {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) => Some(s.clone()),
                other => Some(other.to_string()),
            }
        };
        rows.push(RawRow {
            id: map.id.as_deref().and_then(field),
            text: field(&map.text),
            outcome: field(&map.outcome),
            moderator: field(&map.moderator),
        });
    }
    Ok(rows)
}

fn validate_row(raw: RawRow, row: usize, map: &ColumnMap) -> std::result::Result<CorpusRecord, (DropReason, String)> {
    let text = raw.text.filter(|t| !t.trim().is_empty()).ok_or((DropReason::MissingText, String::new()))?;
    let outcome_cell =
        raw.outcome.filter(|c| !c.trim().is_empty()).ok_or((DropReason::MissingOutcome, String::new()))?;
    let moderator_cell =
        raw.moderator.filter(|c| !c.trim().is_empty()).ok_or((DropReason::MissingModerator, String::new()))?;

    let outcome: f64 =
        outcome_cell.trim().parse().map_err(|_| (DropReason::NonNumericOutcome, outcome_cell.clone()))?;

    let moderator: f64 = match &map.moderator_levels {
        Some([zero, one]) => {
            let cell = moderator_cell.trim();
            if cell == zero.as_str() {
                0.0
            } else if cell == one.as_str() {
                1.0
            } else {
                return Err((DropReason::UnknownModeratorLevel, cell.to_owned()));
            }
        }
        None => moderator_cell.trim().parse().map_err(|_| (DropReason::NonNumericModerator, moderator_cell.clone()))?,
    };

    if !outcome.is_finite() || !moderator.is_finite() {
        return Err((DropReason::NonFinite, format!("outcome={outcome}, moderator={moderator}")));
    }

    let id = raw.id.map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).unwrap_or_else(|| row.to_string());
    Ok(CorpusRecord { id, text, outcome, moderator })
}

/// Active stopword set. Entries are stored lowercased.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn english() -> Self {
        Self::from_lines(ENGLISH_STOPWORDS.lines())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One token per line; blank lines are ignored.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let lines: Vec<String> = BufReader::new(reader).lines().collect::<std::io::Result<_>>()?;
        Ok(Self::from_lines(lines.iter().map(String::as_str)))
    }

    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        StopWords(lines.into_iter().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Lowercased word tokens (letters, digits, apostrophes) with stopwords removed.
pub fn tokenize_text(text: &str, stopwords: &StopWords) -> Vec<String> {
    text.split(|c: char| !is_token_char(c))
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c| c == '\'' || c == '\u{2019}');
            if trimmed.is_empty() {
                return None;
            }
            let token = trimmed.replace('\u{2019}', "'").to_lowercase();
            (!stopwords.contains(&token)).then_some(token)
        })
        .collect()
}

pub fn tokenize(record: &CorpusRecord, stopwords: &StopWords) -> TokenizedDoc {
    TokenizedDoc { id: record.id.clone(), tokens: tokenize_text(&record.text, stopwords) }
}

pub fn tokenize_all(records: &[CorpusRecord], stopwords: &StopWords) -> Vec<TokenizedDoc> {
    records.par_iter().map(|r| tokenize(r, stopwords)).collect()
}

/// A z-scored column together with the raw-unit scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedColumn {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl StandardizedColumn {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Maps a raw-unit value onto the standardized scale.
    pub fn to_standard(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }

    pub fn to_raw(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Sample mean and sample standard deviation (`n - 1` divisor).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn standardize(values: &[f64]) -> Result<StandardizedColumn> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!("standardize needs at least 2 values, got {}", values.len())));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value {bad} in column")));
    }
    let (mean, sd) = mean_sd(values);
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(sd > 0.0) || sd <= scale * 1e-14 {
        return Err(Error::Degenerate("column is constant and carries no information".into()));
    }
    Ok(StandardizedColumn { values: values.iter().map(|v| (v - mean) / sd).collect(), mean, sd })
}
