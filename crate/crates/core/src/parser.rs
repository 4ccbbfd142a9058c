//! Extraction of numbered distractor lists from raw model output, and the
//! inverse rendering used in prompts and fixtures.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListStyle {
    /// `1. a 2. b 3. c`
    #[default]
    Inline,
    /// One `n. item` per line.
    Lines,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("cannot render an empty distractor list")]
    Empty,
}

/// Renders `items` as a numbered list with `.` after each number.
pub fn render<S: AsRef<str>>(items: &[S], style: ListStyle) -> Result<String, RenderError> {
    if items.is_empty() {
        return Err(RenderError::Empty);
    }
    Ok(enumerate_items(items, ".", style))
}

/// Numbered list with a caller-chosen separator after each number. Empty
/// input renders as an empty string.
pub fn enumerate_items<S: AsRef<str>>(items: &[S], separator: &str, style: ListStyle) -> String {
    let joiner = match style {
        ListStyle::Inline => " ",
        ListStyle::Lines => "\n",
    };
    items
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}{} {}", i + 1, separator, d.as_ref()))
        .collect::<Vec<_>>()
        .join(joiner)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    NoEnumeration,
    Preamble(String),
    TrailingText { item: usize, text: String },
    PunctuationOnly { item: usize },
    AnswerEqual { item: usize, text: String },
    Duplicate { item: usize, text: String },
    Truncated { kept: usize, dropped: usize },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::NoEnumeration => write!(f, "no enumeration found"),
            ParseWarning::Preamble(t) => write!(f, "ignored text before first item: {t:?}"),
            ParseWarning::TrailingText { item, text } => {
                write!(f, "ignored text after item {item}: {text:?}")
            }
            ParseWarning::PunctuationOnly { item } => {
                write!(f, "item {item} dropped: empty or punctuation only")
            }
            ParseWarning::AnswerEqual { item, text } => {
                write!(f, "item {item} dropped: {text:?} equals the answer")
            }
            ParseWarning::Duplicate { item, text } => {
                write!(f, "item {item} dropped: duplicate of earlier {text:?}")
            }
            ParseWarning::Truncated { kept, dropped } => {
                write!(f, "kept first {kept} items, dropped {dropped} beyond the requested count")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub distractors: Vec<String>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Copy)]
struct Marker {
    start: usize,
    content_start: usize,
}

/// Finds enumeration markers (`<1-3 digits>` then `.` or `)` then
/// whitespace, at the start of the text or after whitespace) whose numbers
/// continue the sequence 1, 2, 3, ... Out-of-sequence markers are content.
fn find_markers(raw: &str) -> Vec<Marker> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    let mut expected = 1u32;
    let mut i = 0;
    while i < bytes.len() {
        let boundary = i == 0 || raw[..i].chars().next_back().is_some_and(char::is_whitespace);
        if boundary && bytes[i].is_ascii_digit() {
            let digits_end = (i..bytes.len().min(i + 4))
                .find(|&j| !bytes[j].is_ascii_digit())
                .unwrap_or(bytes.len().min(i + 4));
            let n_digits = digits_end - i;
            if (1..=3).contains(&n_digits)
                && digits_end < bytes.len()
                && matches!(bytes[digits_end], b'.' | b')')
            {
                let after = digits_end + 1;
                let ws_follows = after == bytes.len()
                    || raw[after..].chars().next().is_some_and(char::is_whitespace);
                let number: u32 = raw[i..digits_end].parse().expect("ascii digits");
                if ws_follows && number == expected {
                    out.push(Marker {
                        start: i,
                        content_start: after,
                    });
                    expected += 1;
                    i = after;
                    continue;
                }
            }
        }
        i += raw[i..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

const QUOTE_PAIRS: [(char, char); 5] = [
    ('"', '"'),
    ('\'', '\''),
    ('“', '”'),
    ('‘', '’'),
    ('«', '»'),
];

fn clean_item(s: &str) -> String {
    let mut s = s.trim();
    loop {
        let before = s;
        s = s.trim_end_matches([',', ';']).trim();
        for (open, close) in QUOTE_PAIRS {
            if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            }
        }
        if s == before {
            break;
        }
    }
    s.to_string()
}

/// Extracts up to `requested_n` distractors from `raw`.
///
/// Never fails: anything unusable is reported as a warning. Items equal to
/// `answer` and repeats of earlier items (both under normalized comparison)
/// are dropped, keeping the first occurrence.
pub fn parse(raw: &str, answer: &str, requested_n: usize) -> ParseOutcome {
    let mut warnings = Vec::new();
    let markers = find_markers(raw);
    if markers.is_empty() {
        warnings.push(ParseWarning::NoEnumeration);
        return ParseOutcome {
            distractors: Vec::new(),
            warnings,
        };
    }

    let preamble = raw[..markers[0].start].trim();
    if !preamble.is_empty() {
        warnings.push(ParseWarning::Preamble(preamble.to_string()));
    }

    let answer_key = normalize(answer);
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for (idx, m) in markers.iter().enumerate() {
        let item_no = idx + 1;
        let end = markers.get(idx + 1).map_or(raw.len(), |n| n.start);
        let span = &raw[m.content_start..end];
        // skip the whitespace right after the marker before looking for a line end
        let lead = span.len() - span.trim_start_matches([' ', '\t']).len();
        let body = &span[lead..];
        let (content, rest) = match body.find('\n') {
            Some(nl) => (&body[..nl], &body[nl..]),
            None => (body, ""),
        };
        let rest = rest.trim();
        if !rest.is_empty() {
            warnings.push(ParseWarning::TrailingText {
                item: item_no,
                text: rest.to_string(),
            });
        }
        let cleaned = clean_item(content);
        if !cleaned.chars().any(char::is_alphanumeric) {
            warnings.push(ParseWarning::PunctuationOnly { item: item_no });
            continue;
        }
        let key = normalize(&cleaned);
        if key == answer_key {
            warnings.push(ParseWarning::AnswerEqual {
                item: item_no,
                text: cleaned,
            });
            continue;
        }
        if !seen.insert(key) {
            warnings.push(ParseWarning::Duplicate {
                item: item_no,
                text: cleaned,
            });
            continue;
        }
        kept.push(cleaned);
    }
    if kept.len() > requested_n {
        warnings.push(ParseWarning::Truncated {
            kept: requested_n,
            dropped: kept.len() - requested_n,
        });
        kept.truncate(requested_n);
    }
    ParseOutcome {
        distractors: kept,
        warnings,
    }
}

/// Parsed candidate distractors for one question from one model or strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSet {
    pub question_id: String,
    pub model_tag: String,
    pub distractors: Vec<String>,
    pub requested_n: usize,
    #[serde(default)]
    pub parse_warnings: Vec<String>,
}

impl DistractorSet {
    pub fn from_response(
        question_id: impl Into<String>,
        model_tag: impl Into<String>,
        raw: &str,
        answer: &str,
        requested_n: usize,
    ) -> Self {
        let out = parse(raw, answer, requested_n);
        Self {
            question_id: question_id.into(),
            model_tag: model_tag.into(),
            distractors: out.distractors,
            requested_n,
            parse_warnings: out.warnings.iter().map(ToString::to_string).collect(),
        }
    }
}
