use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use super::{EvalError, QualityLabel, RatingRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub true_answer: usize,
    pub good: usize,
    pub poor: usize,
    pub nonsense: usize,
}

impl LabelCounts {
    pub fn add(&mut self, label: QualityLabel) {
        *self.get_mut(label) += 1;
    }

    pub fn get(&self, label: QualityLabel) -> usize {
        match label {
            QualityLabel::TrueAnswer => self.true_answer,
            QualityLabel::Good => self.good,
            QualityLabel::Poor => self.poor,
            QualityLabel::Nonsense => self.nonsense,
        }
    }

    fn get_mut(&mut self, label: QualityLabel) -> &mut usize {
        match label {
            QualityLabel::TrueAnswer => &mut self.true_answer,
            QualityLabel::Good => &mut self.good,
            QualityLabel::Poor => &mut self.poor,
            QualityLabel::Nonsense => &mut self.nonsense,
        }
    }

    pub fn total(&self) -> usize {
        self.true_answer + self.good + self.poor + self.nonsense
    }

    /// Percentage of ratings carrying `label`; 0 when nothing was rated.
    pub fn percent(&self, label: QualityLabel) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.get(label) as f64 / t as f64,
        }
    }

    pub fn merge(&mut self, other: &LabelCounts) {
        for l in QualityLabel::ALL {
            *self.get_mut(l) += other.get(l);
        }
    }
}

/// Ratings for one model on one question group, after completeness checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellCounts {
    pub questions: usize,
    /// Sum over questions of the number of annotators who rated it.
    pub annotator_questions: usize,
    pub counts: LabelCounts,
}

/// Validates and tallies the ratings of `model_tag` on the questions in
/// `group`.
///
/// Every question must have exactly `k` distinct distractors attributed to
/// the model, and every annotator who rated a question must have rated each
/// of those distractors. A distractor shared by several models counts once
/// for each of them.
pub fn rated_cell(
    records: &[RatingRecord],
    model_tag: &str,
    group: &BTreeSet<String>,
    k: usize,
) -> Result<CellCounts, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if group.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut distractors: BTreeMap<&str, BTreeSet<&str>> =
        group.iter().map(|q| (q.as_str(), BTreeSet::new())).collect();
    let mut annotators: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut rated: HashSet<(&str, &str, &str)> = HashSet::new();
    let mut counts = LabelCounts::default();
    for r in records.iter().filter(|r| group.contains(&r.question_id)) {
        annotators
            .entry(&r.question_id)
            .or_default()
            .insert(&r.annotator_id);
        if r.has_model(model_tag) {
            distractors
                .get_mut(r.question_id.as_str())
                .expect("group member")
                .insert(&r.distractor);
            if !rated.insert((&r.question_id, &r.distractor, &r.annotator_id)) {
                return Err(EvalError::DuplicateRating {
                    question_id: r.question_id.clone(),
                    distractor: r.distractor.clone(),
                    annotator_id: r.annotator_id.clone(),
                });
            }
            counts.add(r.label);
        }
    }

    let offenders: Vec<(String, usize)> = distractors
        .iter()
        .filter(|(_, ds)| ds.len() != k)
        .map(|(q, ds)| (q.to_string(), ds.len()))
        .collect();
    if !offenders.is_empty() {
        return Err(EvalError::WrongDistractorCount {
            model_tag: model_tag.to_string(),
            k,
            offenders,
        });
    }

    let mut gaps = Vec::new();
    let mut annotator_questions = 0;
    for (q, ds) in &distractors {
        let who = &annotators[q];
        annotator_questions += who.len();
        for d in ds {
            for a in who {
                if !rated.contains(&(*q, *d, *a)) {
                    gaps.push((q.to_string(), d.to_string(), a.to_string()));
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(EvalError::MissingRatings { gaps });
    }
    Ok(CellCounts {
        questions: group.len(),
        annotator_questions,
        counts,
    })
}

/// Percentage of the `k` proposed distractors per question (and per
/// annotator) that received `label`.
pub fn label_rate(
    records: &[RatingRecord],
    model_tag: &str,
    group: &BTreeSet<String>,
    k: usize,
    label: QualityLabel,
) -> Result<f64, EvalError> {
    let cell = rated_cell(records, model_tag, group, k)?;
    let denominator = k * cell.annotator_questions;
    Ok(100.0 * cell.counts.get(label) as f64 / denominator as f64)
}

/// Good distractor rate.
pub fn gdr_at_k(
    records: &[RatingRecord],
    model_tag: &str,
    group: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    label_rate(records, model_tag, group, k, QualityLabel::Good)
}

/// Nonsense distractor rate.
pub fn ndr_at_k(
    records: &[RatingRecord],
    model_tag: &str,
    group: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    label_rate(records, model_tag, group, k, QualityLabel::Nonsense)
}

/// GDR and NDR computed separately for each annotator.
pub fn per_annotator_rates(
    records: &[RatingRecord],
    model_tag: &str,
    group: &BTreeSet<String>,
    k: usize,
) -> Result<BTreeMap<String, (f64, f64)>, EvalError> {
    let mut out = BTreeMap::new();
    for (annotator, own) in super::by_annotator(records) {
        let rated: BTreeSet<String> = own
            .iter()
            .map(|r| r.question_id.clone())
            .filter(|q| group.contains(q))
            .collect();
        if rated.is_empty() {
            continue;
        }
        let gdr = gdr_at_k(&own, model_tag, &rated, k)?;
        let ndr = ndr_at_k(&own, model_tag, &rated, k)?;
        out.insert(annotator, (gdr, ndr));
    }
    Ok(out)
}
