//! Question items, question banks and their on-disk formats.
//!
//! The canonical format is JSONL, one item per line. CSV with the header
//! `id,stem,answer,distractors,language,subject` (distractors separated by
//! `|`) is accepted for ingestion only.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    NotUtf8 { path: PathBuf },
    #[error("line {line}: {}{message}", field.as_ref().map(|f| format!("field `{f}`: ")).unwrap_or_default())]
    Malformed {
        line: usize,
        field: Option<String>,
        message: String,
    },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("invalid item {id:?}: {problem}")]
    InvalidItem { id: String, problem: ItemProblem },
}

/// A violated item invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemProblem {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ItemProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    En,
    Nl,
    Fr,
    Other(String),
}

impl Language {
    pub fn code(&self) -> &str {
        match self {
            Language::En => "EN",
            Language::Nl => "NL",
            Language::Fr => "FR",
            Language::Other(tag) => tag,
        }
    }
}

impl FromStr for Language {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.to_ascii_uppercase().as_str() {
            "EN" => Language::En,
            "NL" => Language::Nl,
            "FR" => Language::Fr,
            _ => Language::Other(s.to_string()),
        })
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for Language {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Language {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.trim().is_empty() {
            return Err(serde::de::Error::custom("empty language tag"));
        }
        Ok(s.parse().expect("infallible"))
    }
}

/// Which pool an item belongs to. Demonstrations are only ever drawn from
/// `Bank` items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    #[default]
    Bank,
    Test,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BANK" => Ok(Source::Bank),
            "TEST" => Ok(Source::Test),
            other => Err(format!("unknown source {other:?} (expected BANK or TEST)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub stem: String,
    pub answer: String,
    #[serde(default)]
    pub distractors: Vec<String>,
    pub language: Language,
    pub subject: String,
    #[serde(default)]
    pub source: Source,
}

impl QuestionItem {
    /// Checks the per-item invariants: non-empty id, stem and answer, no
    /// blank distractor and no distractor equal to the answer.
    pub fn validate(&self) -> Result<(), ItemProblem> {
        if self.id.trim().is_empty() {
            return Err(ItemProblem {
                field: "id",
                message: "empty id".into(),
            });
        }
        if normalize(&self.stem).is_empty() {
            return Err(ItemProblem {
                field: "stem",
                message: "empty stem".into(),
            });
        }
        let answer = normalize(&self.answer);
        if answer.is_empty() {
            return Err(ItemProblem {
                field: "answer",
                message: "empty answer".into(),
            });
        }
        for (i, d) in self.distractors.iter().enumerate() {
            let nd = normalize(d);
            if nd.is_empty() {
                return Err(ItemProblem {
                    field: "distractors",
                    message: format!("distractor #{} is empty", i + 1),
                });
            }
            if nd == answer {
                return Err(ItemProblem {
                    field: "distractors",
                    message: format!("distractor {d:?} equals the answer"),
                });
            }
        }
        Ok(())
    }
}

/// Per-subject tallies as reported by [`QuestionBank::stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SubjectStats {
    pub items: usize,
    pub gold_distractors: usize,
}

/// An immutable, validated, id-unique collection of question items.
#[derive(Debug, Clone)]
pub struct QuestionBank {
    name: String,
    items: Vec<QuestionItem>,
    index: HashMap<String, usize>,
}

impl PartialEq for QuestionBank {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.items == other.items
    }
}

impl QuestionBank {
    pub fn new(name: impl Into<String>, items: Vec<QuestionItem>) -> Result<Self, BankError> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            item.validate().map_err(|problem| BankError::InvalidItem {
                id: item.id.clone(),
                problem,
            })?;
            if let Some(prev) = index.insert(item.id.clone(), pos) {
                return Err(BankError::DuplicateId {
                    id: item.id.clone(),
                    first_line: prev + 1,
                    second_line: pos + 1,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            items,
            index,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            items: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn items(&self) -> &[QuestionItem] {
        &self.items
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QuestionItem> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QuestionItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    /// Item and gold-distractor counts per subject, tallied fresh on every
    /// call.
    pub fn stats(&self) -> BTreeMap<String, SubjectStats> {
        let mut out: BTreeMap<String, SubjectStats> = BTreeMap::new();
        for item in &self.items {
            let entry = out.entry(item.subject.clone()).or_default();
            entry.items += 1;
            entry.gold_distractors += item.distractors.len();
        }
        out
    }

    pub fn language_counts(&self) -> BTreeMap<Language, usize> {
        let mut out = BTreeMap::new();
        for item in &self.items {
            *out.entry(item.language.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Writes the bank as canonical JSONL.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BankError> {
        let path = path.as_ref();
        let write_err = |source| BankError::Write {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(write_err)?);
        for item in &self.items {
            let line = serde_json::to_string(item).expect("items always serialize");
            writeln!(out, "{line}").map_err(write_err)?;
        }
        out.flush().map_err(write_err)
    }
}

impl<'a> IntoIterator for &'a QuestionBank {
    type Item = &'a QuestionItem;
    type IntoIter = std::slice::Iter<'a, QuestionItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub format: Format,
    /// Abort on the first invalid record instead of skipping it.
    pub strict: bool,
    /// Source assigned to records that do not carry one.
    pub source: Source,
    /// Bank name; defaults to the file stem.
    pub name: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            format: Format::Jsonl,
            strict: false,
            source: Source::Bank,
            name: None,
        }
    }
}

/// A record skipped during a lenient ingest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "line {}: field `{}`: {}", self.line, field, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub bank: QuestionBank,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    id: String,
    stem: String,
    answer: String,
    #[serde(default)]
    distractors: Vec<String>,
    language: Language,
    subject: String,
    #[serde(default)]
    source: Option<Source>,
}

/// Reads a bank from JSONL or CSV, preserving record order.
///
/// Invalid records are skipped and reported as diagnostics unless
/// `opts.strict` is set. Duplicate ids are always fatal.
pub fn ingest(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Ingested, BankError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| BankError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| BankError::NotUtf8 {
        path: path.to_path_buf(),
    })?;
    let records = match opts.format {
        Format::Jsonl => parse_jsonl(&text, opts.source),
        Format::Csv => parse_csv(&text, opts.source),
    };

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut items = Vec::new();
    let mut diagnostics = Vec::new();
    for (line, record) in records {
        let item = match record {
            Ok(item) => item,
            Err((field, message)) => {
                if opts.strict {
                    return Err(BankError::Malformed {
                        line,
                        field,
                        message,
                    });
                }
                diagnostics.push(Diagnostic {
                    line,
                    field,
                    message,
                });
                continue;
            }
        };
        if let Some(&first_line) = seen.get(&item.id) {
            return Err(BankError::DuplicateId {
                id: item.id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(item.id.clone(), line);
        if let Err(problem) = item.validate() {
            if opts.strict {
                return Err(BankError::Malformed {
                    line,
                    field: Some(problem.field.to_string()),
                    message: problem.message,
                });
            }
            diagnostics.push(Diagnostic {
                line,
                field: Some(problem.field.to_string()),
                message: problem.message,
            });
            continue;
        }
        items.push(item);
    }

    let name = opts.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let bank = QuestionBank::new(name, items)?;
    Ok(Ingested { bank, diagnostics })
}

type RecordResult = Result<QuestionItem, (Option<String>, String)>;

fn parse_jsonl(text: &str, default_source: Source) -> Vec<(usize, RecordResult)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec = serde_json::from_str::<JsonRecord>(l)
                .map(|r| QuestionItem {
                    id: r.id,
                    stem: r.stem,
                    answer: r.answer,
                    distractors: r.distractors,
                    language: r.language,
                    subject: r.subject,
                    source: r.source.unwrap_or(default_source),
                })
                .map_err(|e| {
                    let msg = e.to_string();
                    (backticked_field(&msg), msg)
                });
            (i + 1, rec)
        })
        .collect()
}

/// Pulls `stem` out of serde messages such as "missing field `stem`".
fn backticked_field(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

const CSV_HEADER: [&str; 6] = ["id", "stem", "answer", "distractors", "language", "subject"];

fn parse_csv(text: &str, source: Source) -> Vec<(usize, RecordResult)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let header_ok = match reader.headers() {
        Ok(h) => {
            let got: Vec<&str> = h.iter().map(str::trim).collect();
            if got.is_empty() || (got.len() == 1 && got[0].is_empty()) {
                return out;
            }
            got == CSV_HEADER
        }
        Err(e) => {
            out.push((1, Err((None, format!("unreadable CSV header: {e}")))));
            return out;
        }
    };
    if !header_ok {
        out.push((
            1,
            Err((None, format!("CSV header must be `{}`", CSV_HEADER.join(",")))),
        ));
        return out;
    }
    for rec in reader.records() {
        match rec {
            Ok(r) => {
                let line = r.position().map(|p| p.line() as usize).unwrap_or(0);
                if r.len() != CSV_HEADER.len() {
                    out.push((
                        line,
                        Err((
                            None,
                            format!("expected {} columns, found {}", CSV_HEADER.len(), r.len()),
                        )),
                    ));
                    continue;
                }
                let language = r[4].trim();
                if language.is_empty() {
                    out.push((line, Err((Some("language".into()), "empty language tag".into()))));
                    continue;
                }
                let item = QuestionItem {
                    id: r[0].trim().to_string(),
                    stem: r[1].to_string(),
                    answer: r[2].to_string(),
                    distractors: r[3]
                        .split('|')
                        .map(str::trim)
                        .filter(|d| !d.is_empty())
                        .map(String::from)
                        .collect(),
                    language: language.parse().expect("infallible"),
                    subject: r[5].trim().to_string(),
                    source,
                };
                out.push((line, Ok(item)));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.push((line, Err((None, e.to_string()))));
            }
        }
    }
    out
}
