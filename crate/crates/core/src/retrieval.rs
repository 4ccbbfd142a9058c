//! Similarity ranking of bank items against a query question, used to pick
//! in-context demonstrations.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{QuestionBank, QuestionItem, Source};
use crate::text::word_tokens;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer request timed out")]
    Timeout,
    #[error("scorer returned HTTP {status}")]
    Status { status: u16 },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer returned invalid score {0}")]
    InvalidScore(f64),
    #[error("scorer transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no candidate items left for query {query_id:?} after filtering")]
    EmptyPool { query_id: String },
    #[error("scoring {candidate_id:?} failed: {source}")]
    Score {
        candidate_id: String,
        source: ScoreError,
    },
}

/// Scores how similar a candidate item is to a query item. Higher is more
/// similar; scores are non-negative and deterministic for fixed inputs.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, query: &QuestionItem, candidate: &QuestionItem) -> Result<f64, ScoreError>;
}

/// Which item text a lexical scorer compares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchFields {
    #[default]
    StemAndAnswer,
    StemOnly,
}

/// Jaccard overlap of lowercase word tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer {
    pub fields: MatchFields,
}

impl LexicalScorer {
    pub fn new(fields: MatchFields) -> Self {
        Self { fields }
    }

    fn tokens(&self, item: &QuestionItem) -> BTreeSet<String> {
        let mut toks: BTreeSet<String> = word_tokens(&item.stem).collect();
        if self.fields == MatchFields::StemAndAnswer {
            toks.extend(word_tokens(&item.answer));
        }
        toks
    }
}

impl SimilarityScorer for LexicalScorer {
    fn score(&self, query: &QuestionItem, candidate: &QuestionItem) -> Result<f64, ScoreError> {
        Ok(jaccard(&self.tokens(query), &self.tokens(candidate)))
    }
}

/// Token-set Jaccard over stem and answer, in `[0, 1]`.
pub fn lexical_score(query: &QuestionItem, candidate: &QuestionItem) -> f64 {
    let s = LexicalScorer::default();
    jaccard(&s.tokens(query), &s.tokens(candidate))
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Serialize)]
struct ScoredText<'a> {
    stem: &'a str,
    answer: &'a str,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: ScoredText<'a>,
    candidate: ScoredText<'a>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// Delegates scoring to an HTTP service:
/// `POST {"query": {stem, answer}, "candidate": {stem, answer}}` returning
/// `{"score": number}`. Errors are surfaced, never replaced by a fallback.
#[derive(Debug, Clone)]
pub struct ExternalScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl ExternalScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ScoreError> {
        crate::llm::install_crypto_provider();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScoreError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl SimilarityScorer for ExternalScorer {
    fn score(&self, query: &QuestionItem, candidate: &QuestionItem) -> Result<f64, ScoreError> {
        external_score(&self.client, &self.endpoint, query, candidate)
    }
}

/// One round-trip to an external scorer service.
pub fn external_score(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    query: &QuestionItem,
    candidate: &QuestionItem,
) -> Result<f64, ScoreError> {
    let body = ScoreRequest {
        query: ScoredText {
            stem: &query.stem,
            answer: &query.answer,
        },
        candidate: ScoredText {
            stem: &candidate.stem,
            answer: &candidate.answer,
        },
    };
    let resp = client.post(endpoint).json(&body).send().map_err(|e| {
        if e.is_timeout() {
            ScoreError::Timeout
        } else {
            ScoreError::Transport(e.to_string())
        }
    })?;
    let status = resp.status();
    if !status.is_success() {
        return Err(ScoreError::Status {
            status: status.as_u16(),
        });
    }
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            ScoreError::Timeout
        } else {
            ScoreError::Transport(e.to_string())
        }
    })?;
    let parsed: ScoreResponse =
        serde_json::from_str(&text).map_err(|e| ScoreError::Malformed(e.to_string()))?;
    if !parsed.score.is_finite() || parsed.score < 0.0 {
        return Err(ScoreError::InvalidScore(parsed.score));
    }
    Ok(parsed.score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExamples {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedExamples {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankOptions {
    pub k: usize,
    /// Only consider candidates in the query's language.
    pub same_language: bool,
    /// Only consider candidates with the query's subject.
    pub same_subject: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            k: 5,
            same_language: true,
            same_subject: false,
        }
    }
}

/// Returns the `k` bank items most similar to `query`.
///
/// Only `Source::Bank` items are candidates, and an item sharing the query's
/// id is never returned. Equal scores are ordered by ascending item id.
pub fn rank(
    query: &QuestionItem,
    bank: &QuestionBank,
    opts: &RankOptions,
    scorer: &dyn SimilarityScorer,
) -> Result<RankedExamples, RetrievalError> {
    if opts.k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let candidates = bank.iter().filter(|c| {
        c.source == Source::Bank
            && c.id != query.id
            && (!opts.same_language || c.language == query.language)
            && (!opts.same_subject || c.subject == query.subject)
    });

    let mut scored = Vec::new();
    for c in candidates {
        let score = scorer
            .score(query, c)
            .map_err(|source| RetrievalError::Score {
                candidate_id: c.id.clone(),
                source,
            })?;
        if !score.is_finite() || score < 0.0 {
            return Err(RetrievalError::Score {
                candidate_id: c.id.clone(),
                source: ScoreError::InvalidScore(score),
            });
        }
        scored.push((c.id.as_str(), score));
    }
    if scored.is_empty() {
        return Err(RetrievalError::EmptyPool {
            query_id: query.id.clone(),
        });
    }

    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        o => o,
    });
    let entries = scored
        .into_iter()
        .take(opts.k)
        .enumerate()
        .map(|(i, (id, score))| RankedEntry {
            id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect();
    Ok(RankedExamples {
        query_id: query.id.clone(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::Language;
    use proptest::prelude::*;

    fn q(id: &str, stem: &str, answer: &str) -> QuestionItem {
        QuestionItem {
            id: id.into(),
            stem: stem.into(),
            answer: answer.into(),
            distractors: vec![],
            language: Language::En,
            subject: "Geography".into(),
            source: Source::Bank,
        }
    }

    fn bank(items: Vec<QuestionItem>) -> QuestionBank {
        QuestionBank::new("t", items).unwrap()
    }

    // Independent oracle: token sets built with a plain char loop.
    fn oracle_tokens(s: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.insert(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.insert(cur);
        }
        out
    }

    #[test]
    fn belgium_germany_is_five_ninths() {
        let a = q("a", "What is the capital of Belgium?", "Brussels");
        let b = q("b", "What is the capital of Germany?", "Berlin");
        let ta: BTreeSet<_> = oracle_tokens("What is the capital of Belgium? Brussels");
        let tb: BTreeSet<_> = oracle_tokens("What is the capital of Germany? Berlin");
        let inter = ta.intersection(&tb).count();
        let union = ta.union(&tb).count();
        assert_eq!((inter, union), (5, 9));
        assert!((lexical_score(&a, &b) - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint() {
        let a = q("a", "What is the capital of Belgium?", "Brussels");
        assert_eq!(lexical_score(&a, &a), 1.0);
        let c = q("c", "Balance H2 + O2", "water");
        assert_eq!(lexical_score(&a, &c), 0.0);
    }

    #[test]
    fn stem_only_ignores_answer() {
        let a = q("a", "capital", "Brussels");
        let b = q("b", "capital", "Berlin");
        let s = LexicalScorer::new(MatchFields::StemOnly);
        assert_eq!(s.score(&a, &b).unwrap(), 1.0);
        assert!(lexical_score(&a, &b) < 1.0);
    }

    #[test]
    fn self_match_ranks_first() {
        let query = q("test-1", "What is the capital of Belgium?", "Brussels");
        let b = bank(vec![
            q("b1", "What is the capital of Germany?", "Berlin"),
            q("b2", "What is the capital of Belgium?", "Brussels"),
            q("b3", "Which gas do plants absorb?", "carbon dioxide"),
        ]);
        let r = rank(&query, &b, &RankOptions::default(), &LexicalScorer::default()).unwrap();
        assert_eq!(r.entries[0].id, "b2");
        assert_eq!(r.entries[0].score, 1.0);
        let ids: Vec<_> = r.ids().collect();
        assert_eq!(ids, ["b2", "b1", "b3"]);
    }

    #[test]
    fn germany_beats_chemistry() {
        let query = q("t", "What is the capital of Belgium?", "Brussels");
        let germany = q("g", "What is the capital of Germany?", "Berlin");
        let chem = q("c", "Balance the reaction H2 + O2", "2 H2O");
        let b = bank(vec![chem.clone(), germany.clone()]);
        let r = rank(&query, &b, &RankOptions::default(), &LexicalScorer::default()).unwrap();
        assert_eq!(r.entries[0].id, "g");
        // brute-force overlap counts
        let tq = oracle_tokens("What is the capital of Belgium? Brussels");
        let tg = oracle_tokens("What is the capital of Germany? Berlin");
        let tc = oracle_tokens("Balance the reaction H2 + O2 2 H2O");
        assert!(tq.intersection(&tg).count() > tq.intersection(&tc).count());
    }

    #[test]
    fn truncates_to_pool_and_excludes_query_id() {
        let query = q("b1", "x y", "z");
        let b = bank(vec![q("b1", "x y", "z"), q("b2", "x", "z"), q("b3", "y", "w")]);
        let opts = RankOptions {
            k: 5,
            ..Default::default()
        };
        let r = rank(&query, &b, &opts, &LexicalScorer::default()).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert!(r.ids().all(|id| id != "b1"));
        let ranks: Vec<_> = r.entries.iter().map(|e| e.rank).collect();
        assert_eq!(ranks, [1, 2]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let query = q("t", "alpha", "beta");
        let b = bank(vec![q("zz", "alpha", "x"), q("aa", "alpha", "y"), q("mm", "alpha", "z")]);
        let r = rank(&query, &b, &RankOptions::default(), &LexicalScorer::default()).unwrap();
        let ids: Vec<_> = r.ids().collect();
        assert_eq!(ids, ["aa", "mm", "zz"]);
    }

    #[test]
    fn filters_language_subject_and_test_items() {
        let query = q("t", "alpha", "beta");
        let mut fr = q("fr", "alpha", "beta");
        fr.language = Language::Fr;
        let mut test_item = q("tst", "alpha", "beta");
        test_item.source = Source::Test;
        let mut hist = q("h", "alpha", "gamma");
        hist.subject = "History".into();
        let b = bank(vec![fr, test_item, hist]);
        let r = rank(&query, &b, &RankOptions::default(), &LexicalScorer::default()).unwrap();
        let ids: Vec<_> = r.ids().collect();
        assert_eq!(ids, ["h"]);

        let subj = RankOptions {
            same_subject: true,
            ..Default::default()
        };
        assert!(matches!(
            rank(&query, &b, &subj, &LexicalScorer::default()),
            Err(RetrievalError::EmptyPool { .. })
        ));
        let zero = RankOptions {
            k: 0,
            ..Default::default()
        };
        assert!(matches!(
            rank(&query, &b, &zero, &LexicalScorer::default()),
            Err(RetrievalError::ZeroK)
        ));
    }

    #[test]
    fn scorer_errors_propagate() {
        struct Broken;
        impl SimilarityScorer for Broken {
            fn score(&self, _: &QuestionItem, _: &QuestionItem) -> Result<f64, ScoreError> {
                Err(ScoreError::Timeout)
            }
        }
        let query = q("t", "a", "b");
        let b = bank(vec![q("x", "a", "b")]);
        assert!(matches!(
            rank(&query, &b, &RankOptions::default(), &Broken),
            Err(RetrievalError::Score { .. })
        ));
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g", "h"]).prop_map(String::from)
    }

    proptest! {
        #[test]
        fn ranking_is_sorted_prefix(
            stems in prop::collection::vec(prop::collection::vec(word(), 1..5), 1..12),
            query in prop::collection::vec(word(), 1..5),
            k in 1usize..8,
        ) {
            let items: Vec<_> = stems.iter().enumerate()
                .map(|(i, s)| q(&format!("i{i:02}"), &s.join(" "), "ans"))
                .collect();
            let b = bank(items);
            let query = q("query", &query.join(" "), "ans");
            let opts = RankOptions { k, ..Default::default() };
            let r1 = rank(&query, &b, &opts, &LexicalScorer::default()).unwrap();
            let r2 = rank(&query, &b, &opts, &LexicalScorer::default()).unwrap();
            prop_assert_eq!(&r1, &r2);
            prop_assert_eq!(r1.entries.len(), k.min(b.len()));
            let ids: BTreeSet<_> = r1.ids().collect();
            prop_assert_eq!(ids.len(), r1.entries.len());
            for (i, w) in r1.entries.windows(2).enumerate() {
                prop_assert!(w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].id < w[1].id), "at {}", i);
            }
            for e in &r1.entries {
                prop_assert!(b.get(&e.id).is_some());
                prop_assert!(lexical_score(&query, &query) >= e.score);
            }
        }

        #[test]
        fn adding_shared_token_never_lowers_score(
            qt in prop::collection::btree_set(word(), 1..6),
            ct in prop::collection::btree_set(word(), 1..6),
        ) {
            let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
            let query = q("q", &join(&qt), "");
            let base = q("c", &join(&ct), "");
            let before = LexicalScorer::new(MatchFields::StemOnly).score(&query, &base).unwrap();
            for t in qt.difference(&ct) {
                let mut grown = ct.clone();
                grown.insert(t.clone());
                let after = LexicalScorer::new(MatchFields::StemOnly)
                    .score(&query, &q("c", &join(&grown), ""))
                    .unwrap();
                prop_assert!(after >= before);
            }
        }
    }
}
