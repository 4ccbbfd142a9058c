//! Sentinel-masked input/target pairs for seq2seq fine-tuning.
//!
//! For an item with stem `S`, answer `A` and distractors `d1..dn`:
//!
//! ```text
//! input:  S <masking sentence> 1. ⟨Mask1⟩ 2. ⟨Mask2⟩ ... <answer label> A
//! target: 1. d1 2. d2 ...
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{QuestionBank, QuestionItem};
use crate::prompt::Templates;

#[derive(Debug, Error)]
pub enum Mt5Error {
    #[error("item {id:?} has no distractors to mask")]
    NoDistractors { id: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("pair {id:?} cannot be unzipped: {reason}")]
    Unzip { id: String, reason: String },
}

pub fn sentinel(i: usize) -> String {
    format!("⟨Mask{i}⟩")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqPair {
    pub source_id: String,
    pub input_text: String,
    pub target_text: String,
    #[serde(skip)]
    pub sentinel_count: usize,
}

pub fn to_pair(item: &QuestionItem, templates: &Templates) -> Result<Seq2SeqPair, Mt5Error> {
    if item.distractors.is_empty() {
        return Err(Mt5Error::NoDistractors {
            id: item.id.clone(),
        });
    }
    let t = templates.get(&item.language);
    let slots: Vec<String> = (1..=item.distractors.len())
        .map(|i| format!("{i}. {}", sentinel(i)))
        .collect();
    let input_text = format!(
        "{} {} {} {} {}",
        item.stem,
        t.masking_sentence,
        slots.join(" "),
        t.answer_label,
        item.answer
    );
    let target_text = item
        .distractors
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {d}", i + 1))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Seq2SeqPair {
        source_id: item.id.clone(),
        input_text,
        target_text,
        sentinel_count: item.distractors.len(),
    })
}

/// Recovers the distractor list from a pair by matching the numbered
/// sentinels in the input against the numbered spans of the target.
pub fn unzip(pair: &Seq2SeqPair) -> Result<Vec<String>, Mt5Error> {
    let err = |reason: String| Mt5Error::Unzip {
        id: pair.source_id.clone(),
        reason,
    };
    let count = (1..)
        .take_while(|&i| pair.input_text.contains(&format!("{i}. {}", sentinel(i))))
        .count();
    if count == 0 {
        return Err(err("input has no sentinels".into()));
    }
    if pair.input_text.contains(&sentinel(count + 1)) {
        return Err(err("sentinels are not numbered consecutively".into()));
    }

    let target = &pair.target_text;
    if !target.starts_with("1. ") {
        return Err(err("target does not start with `1. `".into()));
    }
    let mut starts = vec![0usize];
    let mut cursor = 0;
    for i in 2..=count {
        let marker = format!(" {i}. ");
        let found = target[cursor..]
            .find(&marker)
            .ok_or_else(|| err(format!("target lacks item {i}")))?;
        cursor += found;
        starts.push(cursor);
        cursor += marker.len();
    }
    let mut out = Vec::with_capacity(count);
    for (idx, &s) in starts.iter().enumerate() {
        let end = starts.get(idx + 1).copied().unwrap_or(target.len());
        let prefix_len = format!("{}. ", idx + 1).len() + usize::from(idx > 0);
        out.push(target[s + prefix_len..end].to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrepReport {
    pub written: usize,
    pub skipped: usize,
}

/// Writes one JSONL pair per item that has distractors; other items are
/// counted as skipped.
pub fn prep_corpus(
    bank: &QuestionBank,
    templates: &Templates,
    out_path: impl AsRef<Path>,
) -> Result<PrepReport, Mt5Error> {
    let path = out_path.as_ref();
    let write_err = |source| Mt5Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(write_err)?);
    let mut report = PrepReport {
        written: 0,
        skipped: 0,
    };
    for item in bank {
        match to_pair(item, templates) {
            Ok(pair) => {
                let line = serde_json::to_string(&pair).expect("pairs always serialize");
                writeln!(out, "{line}").map_err(write_err)?;
                report.written += 1;
            }
            Err(Mt5Error::NoDistractors { .. }) => report.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    out.flush().map_err(write_err)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{Language, Source};

    fn item(id: &str, ds: &[&str]) -> QuestionItem {
        QuestionItem {
            id: id.into(),
            stem: "What is the capital of Belgium?".into(),
            answer: "Brussels".into(),
            distractors: ds.iter().map(|s| s.to_string()).collect(),
            language: Language::En,
            subject: "Geography".into(),
            source: Source::Bank,
        }
    }

    #[test]
    fn belgium_pair() {
        let p = to_pair(&item("q1", &["Antwerp", "Ghent"]), &Templates::builtin()).unwrap();
        assert_eq!(
            p.input_text,
            "What is the capital of Belgium? Which of the following are incorrect answers \
             1. ⟨Mask1⟩ 2. ⟨Mask2⟩ answer: Brussels"
        );
        assert_eq!(p.target_text, "1. Antwerp 2. Ghent");
        assert_eq!(p.sentinel_count, 2);
        assert_eq!(unzip(&p).unwrap(), ["Antwerp", "Ghent"]);
    }

    #[test]
    fn single_distractor() {
        let p = to_pair(&item("q1", &["Antwerp"]), &Templates::builtin()).unwrap();
        assert_eq!(p.target_text, "1. Antwerp");
        assert_eq!(p.input_text.matches("⟨Mask").count(), 1);
    }

    #[test]
    fn dutch_uses_dutch_sentence() {
        let mut it = item("nl1", &["Antwerpen", "Gent"]);
        it.language = Language::Nl;
        it.stem = "Wat is de hoofdstad van België?".into();
        it.answer = "Brussel".into();
        let p = to_pair(&it, &Templates::builtin()).unwrap();
        assert_eq!(
            p.input_text,
            "Wat is de hoofdstad van België? Welke van de volgende zijn foute antwoorden \
             1. ⟨Mask1⟩ 2. ⟨Mask2⟩ antwoord: Brussel"
        );
    }

    #[test]
    fn no_distractors_is_an_error() {
        assert!(matches!(
            to_pair(&item("q", &[]), &Templates::builtin()),
            Err(Mt5Error::NoDistractors { .. })
        ));
    }

    #[test]
    fn unzip_keeps_multiword_and_numbers() {
        let ds = ["profit-making strategy", "in 1914", "3.14", "a. b"];
        let p = to_pair(&item("q", &ds), &Templates::builtin()).unwrap();
        assert_eq!(unzip(&p).unwrap(), ds);
    }

    #[test]
    fn corpus_skips_empty_items_and_is_stable() {
        let bank = QuestionBank::new(
            "b",
            vec![item("a", &["x"]), item("b", &[]), item("c", &["y", "z"])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.jsonl");
        let p2 = dir.path().join("two.jsonl");
        let r = prep_corpus(&bank, &Templates::builtin(), &p1).unwrap();
        assert_eq!(r, PrepReport { written: 2, skipped: 1 });
        prep_corpus(&bank, &Templates::builtin(), &p2).unwrap();
        let one = std::fs::read(&p1).unwrap();
        assert_eq!(one, std::fs::read(&p2).unwrap());
        let first: serde_json::Value =
            serde_json::from_str(std::str::from_utf8(&one).unwrap().lines().next().unwrap())
                .unwrap();
        let keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["input_text", "source_id", "target_text"]);

        let empty = dir.path().join("empty.jsonl");
        let r = prep_corpus(&QuestionBank::empty("e"), &Templates::builtin(), &empty).unwrap();
        assert_eq!(r.written, 0);
    }
}
