//! String equality shared by every module that compares distractors,
//! answers or stems.

use unicode_normalization::UnicodeNormalization;

/// Canonical comparison form: NFC, lowercase, trimmed, internal whitespace
/// collapsed to single spaces.
pub fn normalize(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `true` when both strings are equal under [`normalize`].
pub fn same_text(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

/// Lowercase word tokens: maximal runs of alphanumeric characters.
pub fn word_tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.nfc().collect::<String>().to_lowercase())
}
