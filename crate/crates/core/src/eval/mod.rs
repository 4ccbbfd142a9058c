//! Distractor-quality statistics over annotator ratings: label rates
//! (GDR@k / NDR@k), inter-annotator agreement and bootstrap significance.

mod agreement;
mod bootstrap;
mod rates;
mod ratings;
mod report;

pub use agreement::{cohens_kappa, jaccard_agreement, Kappa};
pub use bootstrap::{bootstrap_p, BootstrapConfig, BootstrapResult, ModelRatings, Statistic};
pub use rates::{gdr_at_k, label_rate, ndr_at_k, per_annotator_rates, rated_cell, CellCounts, LabelCounts};
pub use ratings::{by_annotator, ratings_csv, read_ratings, write_ratings, QualityLabel, RatingRecord};
pub use report::{build_report, CategoryRow, MetricCell, MetricReport, ReportSpec, Significance, Weighting};

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read ratings: {0}")]
    Io(#[from] std::io::Error),
    #[error("ratings CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("ratings line {line}: {message}")]
    BadRecord { line: u64, message: String },
    #[error("unknown quality label {0:?}")]
    UnknownLabel(String),
    #[error("duplicate rating for question {question_id:?}, distractor {distractor:?}, annotator {annotator_id:?}")]
    DuplicateRating {
        question_id: String,
        distractor: String,
        annotator_id: String,
    },
    #[error("expected {k} distractors per question for model {model_tag:?}; offenders: {offenders:?}")]
    WrongDistractorCount {
        model_tag: String,
        k: usize,
        offenders: Vec<(String, usize)>,
    },
    #[error("missing ratings (question, distractor, annotator): {gaps:?}")]
    MissingRatings { gaps: Vec<(String, String, String)> },
    #[error("no questions to evaluate")]
    EmptyGroup,
    #[error("annotators rated different items; only in first: {only_a:?}; only in second: {only_b:?}")]
    UniverseMismatch {
        only_a: Vec<(String, String)>,
        only_b: Vec<(String, String)>,
    },
    #[error("records passed as one annotator's ratings come from several annotators: {0:?}")]
    MixedAnnotators(BTreeSet<String>),
    #[error("at least two rated items are needed, found {0}")]
    TooFewItems(usize),
    #[error("models were rated on different question sets; only reference: {only_reference:?}; only challenger: {only_challenger:?}")]
    QuestionSetMismatch {
        only_reference: Vec<String>,
        only_challenger: Vec<String>,
    },
    #[error("resample count must be at least 1")]
    ZeroResamples,
    #[error("k must be at least 1")]
    ZeroK,
}
