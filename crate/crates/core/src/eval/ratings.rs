use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::text::normalize;

/// Four-level distractor quality scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityLabel {
    /// The "distractor" is actually a correct answer.
    TrueAnswer,
    /// Usable in a multiple-choice question as is.
    Good,
    /// On topic but not a usable distractor.
    Poor,
    /// Completely out of context.
    Nonsense,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; 4] = [
        QualityLabel::TrueAnswer,
        QualityLabel::Good,
        QualityLabel::Poor,
        QualityLabel::Nonsense,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLabel::TrueAnswer => "TRUE_ANSWER",
            QualityLabel::Good => "GOOD",
            QualityLabel::Poor => "POOR",
            QualityLabel::Nonsense => "NONSENSE",
        }
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLabel {
    type Err = EvalError;

    /// Accepts `TRUE_ANSWER`, `True Answer`, `true-answer`, `good`, ...
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_uppercase() })
            .collect();
        match key.as_str() {
            "TRUE_ANSWER" => Ok(QualityLabel::TrueAnswer),
            "GOOD" => Ok(QualityLabel::Good),
            "POOR" => Ok(QualityLabel::Poor),
            "NONSENSE" => Ok(QualityLabel::Nonsense),
            _ => Err(EvalError::UnknownLabel(s.to_string())),
        }
    }
}

/// One annotator's label for one (question, distractor) pair. A distractor
/// produced by several models carries all their tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub question_id: String,
    pub distractor: String,
    pub model_tags: BTreeSet<String>,
    pub annotator_id: String,
    pub label: QualityLabel,
}

impl RatingRecord {
    pub fn new<I, S>(
        question_id: impl Into<String>,
        distractor: &str,
        model_tags: I,
        annotator_id: impl Into<String>,
        label: QualityLabel,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            question_id: question_id.into(),
            distractor: normalize(distractor),
            model_tags: model_tags.into_iter().map(Into::into).collect(),
            annotator_id: annotator_id.into(),
            label,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.question_id, &self.distractor)
    }

    pub fn has_model(&self, tag: &str) -> bool {
        self.model_tags.contains(tag)
    }
}

/// Groups records by annotator id.
pub fn by_annotator(records: &[RatingRecord]) -> BTreeMap<String, Vec<RatingRecord>> {
    let mut out: BTreeMap<String, Vec<RatingRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.annotator_id.clone()).or_default().push(r.clone());
    }
    out
}

const HEADER: [&str; 5] = ["question_id", "distractor", "model_tags", "annotator_id", "label"];

/// Reads `question_id,distractor,model_tags,annotator_id,label` CSV, with
/// model tags separated by `|`.
pub fn read_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>, EvalError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != HEADER {
        return Err(EvalError::BadRecord {
            line: 1,
            message: format!("header must be `{}`", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| EvalError::BadRecord { line, message };
        let tags: BTreeSet<String> = rec[2]
            .split('|')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect();
        if tags.is_empty() {
            return Err(bad("no model tags".into()));
        }
        let label: QualityLabel = rec[4].parse().map_err(|e: EvalError| bad(e.to_string()))?;
        let r = RatingRecord::new(rec[0].trim(), &rec[1], tags, rec[3].trim(), label);
        if r.question_id.is_empty() || r.distractor.is_empty() || r.annotator_id.is_empty() {
            return Err(bad("empty question id, distractor or annotator".into()));
        }
        if !seen.insert((r.question_id.clone(), r.distractor.clone(), r.annotator_id.clone())) {
            return Err(EvalError::DuplicateRating {
                question_id: r.question_id,
                distractor: r.distractor,
                annotator_id: r.annotator_id,
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_ratings(path: impl AsRef<Path>, records: &[RatingRecord]) -> Result<(), EvalError> {
    emit(csv::Writer::from_path(path)?, records)
}

/// The ratings CSV as a string.
pub fn ratings_csv(records: &[RatingRecord]) -> Result<String, EvalError> {
    let mut buf = Vec::new();
    emit(csv::Writer::from_writer(&mut buf), records)?;
    Ok(String::from_utf8(buf).expect("csv of utf-8 fields"))
}

fn emit<W: std::io::Write>(mut w: csv::Writer<W>, records: &[RatingRecord]) -> Result<(), EvalError> {
    w.write_record(HEADER)?;
    for r in records {
        let tags = r.model_tags.iter().cloned().collect::<Vec<_>>().join("|");
        w.write_record([
            r.question_id.as_str(),
            r.distractor.as_str(),
            tags.as_str(),
            r.annotator_id.as_str(),
            r.label.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
