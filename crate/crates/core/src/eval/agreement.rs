use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{EvalError, QualityLabel, RatingRecord};

type Key = (String, String);

/// One annotator's labels keyed by (question, distractor).
fn label_map(records: &[RatingRecord]) -> Result<BTreeMap<Key, QualityLabel>, EvalError> {
    let annotators: BTreeSet<String> = records.iter().map(|r| r.annotator_id.clone()).collect();
    if annotators.len() > 1 {
        return Err(EvalError::MixedAnnotators(annotators));
    }
    let mut out = BTreeMap::new();
    for r in records {
        let key = (r.question_id.clone(), r.distractor.clone());
        if out.insert(key, r.label).is_some() {
            return Err(EvalError::DuplicateRating {
                question_id: r.question_id.clone(),
                distractor: r.distractor.clone(),
                annotator_id: r.annotator_id.clone(),
            });
        }
    }
    Ok(out)
}

fn paired(
    a: &[RatingRecord],
    b: &[RatingRecord],
) -> Result<Vec<(QualityLabel, QualityLabel)>, EvalError> {
    let ma = label_map(a)?;
    let mb = label_map(b)?;
    let only_a: Vec<Key> = ma.keys().filter(|k| !mb.contains_key(*k)).cloned().collect();
    let only_b: Vec<Key> = mb.keys().filter(|k| !ma.contains_key(*k)).cloned().collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(EvalError::UniverseMismatch { only_a, only_b });
    }
    Ok(ma.iter().map(|(k, la)| (*la, mb[k])).collect())
}

/// Per-label agreement: the share of items labelled `label` by either
/// annotator that both labelled `label`, as a percentage. `None` when
/// neither annotator used the label.
pub fn jaccard_agreement(
    a: &[RatingRecord],
    b: &[RatingRecord],
    label: QualityLabel,
) -> Result<Option<f64>, EvalError> {
    let pairs = paired(a, b)?;
    let both = pairs.iter().filter(|(x, y)| *x == label && *y == label).count();
    let either = pairs.iter().filter(|(x, y)| *x == label || *y == label).count();
    Ok((either > 0).then(|| 100.0 * both as f64 / either as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub items: usize,
    pub observed: f64,
    pub expected: f64,
    /// `None` when chance agreement is 1 and kappa is undefined.
    pub value: Option<f64>,
}

impl Kappa {
    /// Kappa scaled by 100, as usually reported in tables.
    pub fn percent(&self) -> Option<f64> {
        self.value.map(|v| 100.0 * v)
    }

    /// Kappa from a square confusion table of counts.
    pub fn from_table(table: &[[usize; 4]; 4]) -> Self {
        let n: usize = table.iter().flatten().sum();
        let nf = n as f64;
        let observed = (0..4).map(|i| table[i][i]).sum::<usize>() as f64 / nf;
        let expected = (0..4)
            .map(|i| {
                let row: usize = table[i].iter().sum();
                let col: usize = table.iter().map(|r| r[i]).sum();
                row as f64 * col as f64
            })
            .sum::<f64>()
            / (nf * nf);
        let value = (expected < 1.0).then(|| (observed - expected) / (1.0 - expected));
        Kappa {
            items: n,
            observed,
            expected,
            value,
        }
    }
}

/// Cohen's kappa over the 4x4 table of paired labels.
pub fn cohens_kappa(a: &[RatingRecord], b: &[RatingRecord]) -> Result<Kappa, EvalError> {
    let pairs = paired(a, b)?;
    if pairs.len() < 2 {
        return Err(EvalError::TooFewItems(pairs.len()));
    }
    let mut table = [[0usize; 4]; 4];
    for (x, y) in pairs {
        table[x.index()][y.index()] += 1;
    }
    Ok(Kappa::from_table(&table))
}
