//! Blinded annotation sessions.
//!
//! A session merges every model's distractors per question, removes
//! duplicates under normalized comparison (remembering every producing model
//! on the hidden side), and shuffles each list with a seed derived from the
//! session id. Annotator-facing payloads never carry model tags.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bank::QuestionItem;
use crate::eval::{QualityLabel, RatingRecord};
use crate::parser::DistractorSet;
use crate::text::normalize;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("question {question_id:?} has no distractors from any model")]
    NoDistractors { question_id: String },
    #[error("distractor sets reference unknown question {question_id:?}")]
    UnknownQuestion { question_id: String },
    #[error("question {question_id:?} has no distractor {distractor:?}")]
    UnknownPair {
        question_id: String,
        distractor: String,
    },
    #[error("distractor {distractor:?} appears more than once in question {question_id:?}; give a position")]
    AmbiguousPair {
        question_id: String,
        distractor: String,
    },
    #[error("idempotency key {key:?} was already used for a different rating")]
    IdempotencyConflict { key: String },
    #[error("session changed since version {expected} (now {actual})")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("session storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("session document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    /// Surface form of the first occurrence.
    pub text: String,
    /// Normalized form used for matching and export.
    pub key: String,
    pub model_tags: BTreeSet<String>,
    pub label: Option<QualityLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionQuestion {
    pub question_id: String,
    pub stem: String,
    pub answer: String,
    pub subject: String,
    pub entries: Vec<SessionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub question_id: String,
    pub position: usize,
    pub label: QualityLabel,
    pub previous: Option<QualityLabel>,
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    /// Secret the annotator's URL must carry.
    pub token: String,
    pub annotator_id: String,
    pub shuffle_seed: u64,
    pub dedup: bool,
    pub questions: Vec<SessionQuestion>,
    pub audit: Vec<AuditEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    /// Explicit session id; derived from the inputs when absent.
    pub session_id: Option<String>,
    /// Present cross-model duplicates verbatim instead of merging them.
    pub keep_duplicates: bool,
}

fn derived_seed(session_id: &str, seed: u64, question_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(session_id.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    h.finalize().into()
}

fn default_session_id(annotator_id: &str, seed: u64, items: &[QuestionItem]) -> String {
    let mut h = Sha256::new();
    h.update(annotator_id.as_bytes());
    h.update(seed.to_le_bytes());
    for it in items {
        h.update([0]);
        h.update(it.id.as_bytes());
    }
    let digest = hex::encode(h.finalize());
    let slug: String = annotator_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    format!("{slug}-{}", &digest[..12])
}

/// Builds a session for one annotator over `test_items`.
pub fn create_session(
    test_items: &[QuestionItem],
    distractor_sets: &[DistractorSet],
    annotator_id: &str,
    seed: u64,
    opts: &SessionOptions,
) -> Result<AnnotationSession, SessionError> {
    let session_id = opts
        .session_id
        .clone()
        .unwrap_or_else(|| default_session_id(annotator_id, seed, test_items));
    let known: HashMap<&str, usize> = test_items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id.as_str(), i))
        .collect();
    let mut per_question: Vec<Vec<SessionEntry>> = vec![Vec::new(); test_items.len()];
    for set in distractor_sets {
        let qi = *known.get(set.question_id.as_str()).ok_or_else(|| {
            SessionError::UnknownQuestion {
                question_id: set.question_id.clone(),
            }
        })?;
        let entries = &mut per_question[qi];
        for d in &set.distractors {
            let key = normalize(d);
            if key.is_empty() {
                continue;
            }
            let existing = if opts.keep_duplicates {
                entries
                    .iter_mut()
                    .find(|e| e.key == key && e.model_tags.contains(&set.model_tag))
            } else {
                entries.iter_mut().find(|e| e.key == key)
            };
            match existing {
                Some(e) => {
                    e.model_tags.insert(set.model_tag.clone());
                }
                None => entries.push(SessionEntry {
                    text: d.trim().to_string(),
                    key,
                    model_tags: [set.model_tag.clone()].into(),
                    label: None,
                }),
            }
        }
    }

    let mut questions = Vec::with_capacity(test_items.len());
    for (item, mut entries) in test_items.iter().zip(per_question) {
        if entries.is_empty() {
            return Err(SessionError::NoDistractors {
                question_id: item.id.clone(),
            });
        }
        let mut rng = ChaCha8Rng::from_seed(derived_seed(&session_id, seed, &item.id));
        entries.shuffle(&mut rng);
        questions.push(SessionQuestion {
            question_id: item.id.clone(),
            stem: item.stem.clone(),
            answer: item.answer.clone(),
            subject: item.subject.clone(),
            entries,
        });
    }

    Ok(AnnotationSession {
        session_id,
        token: uuid::Uuid::new_v4().simple().to_string(),
        annotator_id: annotator_id.to_string(),
        shuffle_seed: seed,
        dedup: !opts.keep_duplicates,
        questions,
        audit: Vec::new(),
    })
}

/// A rating submitted by an annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingInput {
    pub question_id: String,
    pub distractor: String,
    /// Disambiguates verbatim duplicates; optional otherwise.
    #[serde(default)]
    pub position: Option<usize>,
    pub label: QualityLabel,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateOutcome {
    Applied { previous: Option<QualityLabel> },
    /// Same idempotency key and same rating seen before; nothing changed.
    Replayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub rated: usize,
    pub total: usize,
}

/// The next item to rate, as shown to the annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NextItem {
    pub status: &'static str,
    pub question_id: String,
    pub question_index: usize,
    pub questions: usize,
    pub stem: String,
    pub answer: String,
    pub distractor: String,
    pub position: usize,
    pub progress: Progress,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum NextPayload {
    Item(NextItem),
    Complete { status: &'static str, progress: Progress },
}

/// Completion stats; the histogram is withheld until every item is rated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub rated: usize,
    pub total: usize,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<BTreeMap<QualityLabel, usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub records: Vec<RatingRecord>,
    /// Percentage of presented items that carry a rating.
    pub completeness: f64,
    pub partial: bool,
    /// Verbatim duplicates rated with different labels.
    pub conflicts: Vec<(String, String)>,
}

impl AnnotationSession {
    pub fn version(&self) -> u64 {
        self.audit.len() as u64
    }

    pub fn progress(&self) -> Progress {
        let (mut rated, mut total) = (0, 0);
        for e in self.questions.iter().flat_map(|q| &q.entries) {
            total += 1;
            rated += usize::from(e.label.is_some());
        }
        Progress { rated, total }
    }

    pub fn is_complete(&self) -> bool {
        let p = self.progress();
        p.rated == p.total
    }

    /// Number of distinct entries presented, after merging.
    pub fn unique_count(&self, question_id: &str) -> Option<usize> {
        self.questions
            .iter()
            .find(|q| q.question_id == question_id)
            .map(|q| q.entries.len())
    }

    pub fn label_of(&self, question_id: &str, distractor: &str) -> Option<QualityLabel> {
        let key = normalize(distractor);
        self.questions
            .iter()
            .find(|q| q.question_id == question_id)?
            .entries
            .iter()
            .find(|e| e.key == key)?
            .label
    }

    fn locate(&self, input: &RatingInput) -> Result<(usize, usize), SessionError> {
        let unknown = || SessionError::UnknownPair {
            question_id: input.question_id.clone(),
            distractor: input.distractor.clone(),
        };
        let qi = self
            .questions
            .iter()
            .position(|q| q.question_id == input.question_id)
            .ok_or_else(unknown)?;
        let key = normalize(&input.distractor);
        let entries = &self.questions[qi].entries;
        if let Some(pos) = input.position {
            return match entries.get(pos) {
                Some(e) if e.key == key => Ok((qi, pos)),
                _ => Err(unknown()),
            };
        }
        let mut matches = entries.iter().enumerate().filter(|(_, e)| e.key == key);
        let (pos, _) = matches.next().ok_or_else(unknown)?;
        if matches.next().is_some() {
            return Err(SessionError::AmbiguousPair {
                question_id: input.question_id.clone(),
                distractor: input.distractor.clone(),
            });
        }
        Ok((qi, pos))
    }

    /// Stores a rating, overwriting any earlier one; every applied change is
    /// appended to the audit log.
    pub fn rate(&mut self, input: &RatingInput) -> Result<RateOutcome, SessionError> {
        let (qi, pos) = self.locate(input)?;
        if let Some(key) = &input.idempotency_key {
            if let Some(prev) = self
                .audit
                .iter()
                .find(|a| a.idempotency_key.as_ref() == Some(key))
            {
                return if prev.question_id == input.question_id
                    && prev.position == pos
                    && prev.label == input.label
                {
                    Ok(RateOutcome::Replayed)
                } else {
                    Err(SessionError::IdempotencyConflict { key: key.clone() })
                };
            }
        }
        let entry = &mut self.questions[qi].entries[pos];
        let previous = entry.label.replace(input.label);
        let seq = self.audit.len() as u64 + 1;
        self.audit.push(AuditEntry {
            seq,
            question_id: input.question_id.clone(),
            position: pos,
            label: input.label,
            previous,
            idempotency_key: input.idempotency_key.clone(),
        });
        Ok(RateOutcome::Applied { previous })
    }

    /// Convenience wrapper around [`rate`](Self::rate) without idempotency.
    pub fn record_rating(
        &mut self,
        question_id: &str,
        distractor: &str,
        label: QualityLabel,
    ) -> Result<Option<QualityLabel>, SessionError> {
        match self.rate(&RatingInput {
            question_id: question_id.to_string(),
            distractor: distractor.to_string(),
            position: None,
            label,
            idempotency_key: None,
        })? {
            RateOutcome::Applied { previous } => Ok(previous),
            RateOutcome::Replayed => unreachable!("no idempotency key given"),
        }
    }

    /// First unrated entry in presentation order.
    pub fn next_payload(&self) -> NextPayload {
        let progress = self.progress();
        for (qi, q) in self.questions.iter().enumerate() {
            if let Some((pos, e)) = q.entries.iter().enumerate().find(|(_, e)| e.label.is_none()) {
                return NextPayload::Item(NextItem {
                    status: "pending",
                    question_id: q.question_id.clone(),
                    question_index: qi,
                    questions: self.questions.len(),
                    stem: q.stem.clone(),
                    answer: q.answer.clone(),
                    distractor: e.text.clone(),
                    position: pos,
                    progress,
                    version: self.version(),
                });
            }
        }
        NextPayload::Complete {
            status: "complete",
            progress,
        }
    }

    pub fn summary(&self) -> Summary {
        let p = self.progress();
        let complete = p.rated == p.total;
        let histogram = complete.then(|| {
            let mut h: BTreeMap<QualityLabel, usize> =
                QualityLabel::ALL.iter().map(|&l| (l, 0)).collect();
            for e in self.questions.iter().flat_map(|q| &q.entries) {
                if let Some(l) = e.label {
                    *h.entry(l).or_insert(0) += 1;
                }
            }
            h
        });
        Summary {
            rated: p.rated,
            total: p.total,
            complete,
            histogram,
        }
    }

    /// One record per rated (question, normalized distractor) with the hidden
    /// model tags re-attached.
    pub fn export(&self) -> Export {
        let mut records = Vec::new();
        let mut conflicts = Vec::new();
        for q in &self.questions {
            let mut merged: Vec<(String, BTreeSet<String>, QualityLabel)> = Vec::new();
            for e in &q.entries {
                let Some(label) = e.label else { continue };
                match merged.iter_mut().find(|(k, _, _)| *k == e.key) {
                    Some((_, tags, l)) => {
                        tags.extend(e.model_tags.iter().cloned());
                        if *l != label {
                            conflicts.push((q.question_id.clone(), e.key.clone()));
                        }
                    }
                    None => merged.push((e.key.clone(), e.model_tags.clone(), label)),
                }
            }
            records.extend(merged.into_iter().map(|(key, tags, label)| RatingRecord {
                question_id: q.question_id.clone(),
                distractor: key,
                model_tags: tags,
                annotator_id: self.annotator_id.clone(),
                label,
            }));
        }
        let p = self.progress();
        let completeness = if p.total == 0 {
            0.0
        } else {
            100.0 * p.rated as f64 / p.total as f64
        };
        Export {
            records,
            completeness,
            partial: p.rated < p.total,
            conflicts,
        }
    }

    /// Writes the session document atomically (temp file, fsync, rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec_pretty(self)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
