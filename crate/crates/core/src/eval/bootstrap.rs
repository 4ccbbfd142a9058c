//! One-tailed bootstrap comparison of two models' label rates.
//!
//! Each resample draws the question set with replacement, independently for
//! the reference and the challenger model, and recomputes the pooled rate
//! for both. The p-value is the share of resamples in which the challenger
//! does at least as well as the reference (higher-or-equal GDR, or
//! lower-or-equal NDR); ties count against significance.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, LabelCounts, QualityLabel, RatingRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Statistic {
    Gdr,
    Ndr,
}

impl Statistic {
    pub fn label(self) -> QualityLabel {
        match self {
            Statistic::Gdr => QualityLabel::Good,
            Statistic::Ndr => QualityLabel::Nonsense,
        }
    }

    /// Whether a challenger value counts as "at least as good" as the
    /// reference value.
    fn challenger_holds(self, challenger: f64, reference: f64) -> bool {
        match self {
            Statistic::Gdr => challenger >= reference,
            Statistic::Ndr => challenger <= reference,
        }
    }
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GDR" => Ok(Statistic::Gdr),
            "NDR" => Ok(Statistic::Ndr),
            other => Err(format!("unknown statistic {other:?} (expected GDR or NDR)")),
        }
    }
}

/// Per-question label tallies for one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelRatings {
    pub model_tag: String,
    pub per_question: BTreeMap<String, LabelCounts>,
}

impl ModelRatings {
    /// Collects the ratings attributed to `model_tag`, optionally limited to
    /// `questions`.
    pub fn from_records(
        records: &[RatingRecord],
        model_tag: &str,
        questions: Option<&BTreeSet<String>>,
    ) -> Self {
        let mut per_question: BTreeMap<String, LabelCounts> = BTreeMap::new();
        for r in records.iter().filter(|r| r.has_model(model_tag)) {
            if questions.is_some_and(|qs| !qs.contains(&r.question_id)) {
                continue;
            }
            per_question
                .entry(r.question_id.clone())
                .or_default()
                .add(r.label);
        }
        Self {
            model_tag: model_tag.to_string(),
            per_question,
        }
    }

    /// `(ratings with label, all ratings)` per question, in question order.
    fn bundles(&self, label: QualityLabel) -> Vec<(usize, usize)> {
        self.per_question
            .values()
            .map(|c| (c.get(label), c.total()))
            .collect()
    }

    fn pooled(&self, label: QualityLabel) -> f64 {
        let mut all = LabelCounts::default();
        for c in self.per_question.values() {
            all.merge(c);
        }
        all.percent(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            resamples: 1000,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub statistic: Statistic,
    pub reference: String,
    pub challenger: String,
    pub reference_value: f64,
    pub challenger_value: f64,
    pub resamples: usize,
    pub seed: u64,
    pub p_value: f64,
}

fn resampled_rate(rng: &mut ChaCha8Rng, bundles: &[(usize, usize)]) -> f64 {
    let n = bundles.len();
    let (mut hits, mut total) = (0usize, 0usize);
    for _ in 0..n {
        let (h, t) = bundles[rng.gen_range(0..n)];
        hits += h;
        total += t;
    }
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// Resample `i` uses its own ChaCha stream derived from `(seed, i)`, so the
/// result does not depend on evaluation order.
pub fn bootstrap_p(
    reference: &ModelRatings,
    challenger: &ModelRatings,
    statistic: Statistic,
    config: BootstrapConfig,
) -> Result<BootstrapResult, EvalError> {
    if config.resamples == 0 {
        return Err(EvalError::ZeroResamples);
    }
    let ref_qs: BTreeSet<&String> = reference.per_question.keys().collect();
    let ch_qs: BTreeSet<&String> = challenger.per_question.keys().collect();
    if ref_qs != ch_qs {
        return Err(EvalError::QuestionSetMismatch {
            only_reference: ref_qs.difference(&ch_qs).map(|s| s.to_string()).collect(),
            only_challenger: ch_qs.difference(&ref_qs).map(|s| s.to_string()).collect(),
        });
    }
    if ref_qs.is_empty() {
        return Err(EvalError::EmptyGroup);
    }

    let label = statistic.label();
    let ref_bundles = reference.bundles(label);
    let ch_bundles = challenger.bundles(label);

    let mut holds = 0usize;
    for i in 0..config.resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let r = resampled_rate(&mut rng, &ref_bundles);
        let c = resampled_rate(&mut rng, &ch_bundles);
        if statistic.challenger_holds(c, r) {
            holds += 1;
        }
    }
    Ok(BootstrapResult {
        statistic,
        reference: reference.model_tag.clone(),
        challenger: challenger.model_tag.clone(),
        reference_value: reference.pooled(label),
        challenger_value: challenger.pooled(label),
        resamples: config.resamples,
        seed: config.seed,
        p_value: holds as f64 / config.resamples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `good[q]` GOOD ratings out of 10 for question q, rest POOR.
    fn model(tag: &str, good: &[usize]) -> ModelRatings {
        let mut recs = Vec::new();
        for (q, &g) in good.iter().enumerate() {
            for d in 0..10 {
                let l = if d < g { QualityLabel::Good } else { QualityLabel::Poor };
                recs.push(RatingRecord::new(format!("q{q:02}"), &format!("{tag}{d}"), [tag], "t", l));
            }
        }
        ModelRatings::from_records(&recs, tag, None)
    }

    fn spread() -> Vec<usize> {
        (0..50).map(|i| (i * 7 + 3) % 11).collect()
    }

    #[test]
    fn identical_models_near_half() {
        let a = model("a", &spread());
        let b = model("b", &spread());
        let r = bootstrap_p(&a, &b, Statistic::Gdr, BootstrapConfig::new(7)).unwrap();
        assert!((0.4..=0.6).contains(&r.p_value), "p = {}", r.p_value);
        assert_eq!(r.reference_value, r.challenger_value);
    }

    #[test]
    fn dominated_challenger_is_significant() {
        let a = model("a", &[10; 20]);
        let b = model("b", &[0; 20]);
        let r = bootstrap_p(&a, &b, Statistic::Gdr, BootstrapConfig::new(1)).unwrap();
        assert!(r.p_value <= 0.001);
        // the other direction is never significant
        let r = bootstrap_p(&b, &a, Statistic::Gdr, BootstrapConfig::new(1)).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn ndr_direction() {
        // reference has fewer nonsense ratings
        let mk = |tag: &str, nonsense: usize| {
            let recs: Vec<_> = (0..10)
                .flat_map(|q| {
                    (0..10).map(move |d| {
                        let l = if d < nonsense { QualityLabel::Nonsense } else { QualityLabel::Good };
                        RatingRecord::new(format!("q{q}"), &format!("d{d}"), [tag], "t", l)
                    })
                })
                .collect();
            ModelRatings::from_records(&recs, tag, None)
        };
        let r = bootstrap_p(&mk("ref", 1), &mk("ch", 8), Statistic::Ndr, BootstrapConfig::new(3))
            .unwrap();
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = model("a", &spread());
        let mut other = spread();
        other.rotate_left(3);
        other[0] = 10;
        let b = model("b", &other);
        let c = BootstrapConfig { resamples: 500, seed: 42 };
        let r1 = bootstrap_p(&a, &b, Statistic::Gdr, c).unwrap();
        let r2 = bootstrap_p(&a, &b, Statistic::Gdr, c).unwrap();
        assert_eq!(r1.p_value.to_bits(), r2.p_value.to_bits());
        let r3 = bootstrap_p(&a, &b, Statistic::Gdr, BootstrapConfig { seed: 43, ..c }).unwrap();
        assert_eq!(r3.resamples, 500);
    }

    #[test]
    fn input_errors() {
        let a = model("a", &[1, 2]);
        let b = model("b", &[1]);
        assert!(matches!(
            bootstrap_p(&a, &b, Statistic::Gdr, BootstrapConfig::new(0)),
            Err(EvalError::QuestionSetMismatch { .. })
        ));
        let empty = model("e", &[]);
        assert!(matches!(
            bootstrap_p(&empty, &empty, Statistic::Gdr, BootstrapConfig::new(0)),
            Err(EvalError::EmptyGroup)
        ));
        assert!(matches!(
            bootstrap_p(&a, &a, Statistic::Gdr, BootstrapConfig { resamples: 0, seed: 0 }),
            Err(EvalError::ZeroResamples)
        ));
    }
}
