//! Prompt rendering for zero-shot, static few-shot and retrieved
//! (dynamic) few-shot distractor generation.
//!
//! Layout, with `⏎` for a newline:
//!
//! ```text
//! zero-shot:  instruction⏎question: stem⏎answer: answer
//! few-shot:   instruction⏎⏎{demo block⏎⏎}*question: stem⏎answer: answer⏎incorrect answers:
//! demo block: question: stem⏎answer: answer⏎incorrect answers: 1. d1 2. d2 ...
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Language, QuestionBank, QuestionItem};
use crate::parser::{enumerate_items, ListStyle};
use crate::retrieval::{rank, RankOptions, RetrievalError, SimilarityScorer};

const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.json");

/// Placeholder in the instruction line replaced by the distractor count.
pub const COUNT_PLACEHOLDER: &str = "{n}";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid template file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("template set {language}: field `{field}` is empty")]
    EmptyField {
        language: String,
        field: &'static str,
    },
    #[error("template set {language}: instruction lacks the {COUNT_PLACEHOLDER} placeholder")]
    NoCountPlaceholder { language: String },
    #[error("template file has no EN set to fall back on")]
    NoEnglish,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("distractor count must be at least 1")]
    ZeroCount,
    #[error("example {id:?} has no gold distractors to demonstrate")]
    ExampleWithoutDistractors { id: String },
    #[error("example {id:?} not found in the bank")]
    UnknownExample { id: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Fixed prompt wording for one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub instruction: String,
    pub question_label: String,
    pub answer_label: String,
    pub incorrect_label: String,
    pub item_separator: String,
    /// Sentence inserted between stem and masked distractors in seq2seq
    /// training inputs.
    pub masking_sentence: String,
}

impl TemplateSet {
    pub fn instruction_line(&self, n: usize) -> String {
        self.instruction.replace(COUNT_PLACEHOLDER, &n.to_string())
    }

    fn check(&self, language: &str) -> Result<(), TemplateError> {
        let fields = [
            ("instruction", &self.instruction),
            ("question_label", &self.question_label),
            ("answer_label", &self.answer_label),
            ("incorrect_label", &self.incorrect_label),
            ("item_separator", &self.item_separator),
            ("masking_sentence", &self.masking_sentence),
        ];
        for (field, value) in fields {
            if value.trim().is_empty() {
                return Err(TemplateError::EmptyField {
                    language: language.to_string(),
                    field,
                });
            }
        }
        if !self.instruction.contains(COUNT_PLACEHOLDER) {
            return Err(TemplateError::NoCountPlaceholder {
                language: language.to_string(),
            });
        }
        Ok(())
    }
}

/// Template sets keyed by language code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    sets: BTreeMap<String, TemplateSet>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    /// The shipped EN/NL/FR sets.
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_TEMPLATES).expect("builtin templates are valid")
    }

    /// Parses a JSON object keyed by language code. Keys starting with `_`
    /// are comments.
    pub fn from_json_str(json: &str) -> Result<Self, TemplateError> {
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(json)?;
        let mut sets = BTreeMap::new();
        for (code, value) in raw {
            if code.starts_with('_') {
                continue;
            }
            let set: TemplateSet = serde_json::from_value(value)?;
            set.check(&code)?;
            sets.insert(code.to_ascii_uppercase(), set);
        }
        if !sets.contains_key("EN") {
            return Err(TemplateError::NoEnglish);
        }
        Ok(Self { sets })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn has(&self, language: &Language) -> bool {
        self.sets.contains_key(&language.code().to_ascii_uppercase())
    }

    /// The set for `language`, falling back to EN with a logged warning.
    pub fn get(&self, language: &Language) -> &TemplateSet {
        match self.sets.get(&language.code().to_ascii_uppercase()) {
            Some(set) => set,
            None => {
                tracing::warn!(language = %language, "no template set, falling back to EN");
                &self.sets["EN"]
            }
        }
    }

    /// Languages among `items` that would fall back to EN.
    pub fn missing_languages<'a>(
        &self,
        items: impl IntoIterator<Item = &'a QuestionItem>,
    ) -> Vec<Language> {
        let mut out: Vec<Language> = items
            .into_iter()
            .map(|i| i.language.clone())
            .filter(|l| !self.has(l))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Zero,
    Static,
    Dynamic,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Zero => "zero",
            Strategy::Static => "static",
            Strategy::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(Strategy::Zero),
            "static" => Ok(Strategy::Static),
            "dynamic" => Ok(Strategy::Dynamic),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// A rendered prompt plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub strategy: Strategy,
    pub target_id: String,
    pub example_ids: Vec<String>,
    pub n_distractors: usize,
    pub language: Language,
}

/// Renders prompts with a fixed template collection and distractor count.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: Templates,
    n_distractors: usize,
    demo_style: ListStyle,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self {
            templates: Templates::builtin(),
            n_distractors: 10,
            demo_style: ListStyle::Inline,
        }
    }
}

impl PromptBuilder {
    pub fn new(templates: Templates) -> Self {
        Self {
            templates,
            ..Default::default()
        }
    }

    pub fn with_distractor_count(mut self, n: usize) -> Self {
        self.n_distractors = n;
        self
    }

    pub fn with_demo_style(mut self, style: ListStyle) -> Self {
        self.demo_style = style;
        self
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn distractor_count(&self) -> usize {
        self.n_distractors
    }

    fn check_count(&self) -> Result<(), PromptError> {
        if self.n_distractors == 0 {
            Err(PromptError::ZeroCount)
        } else {
            Ok(())
        }
    }

    fn question_lines(t: &TemplateSet, item: &QuestionItem) -> String {
        format!(
            "{} {}\n{} {}",
            t.question_label, item.stem, t.answer_label, item.answer
        )
    }

    pub fn zero_shot(&self, item: &QuestionItem) -> Result<Prompt, PromptError> {
        self.check_count()?;
        let t = self.templates.get(&item.language);
        let text = format!(
            "{}\n{}",
            t.instruction_line(self.n_distractors),
            Self::question_lines(t, item)
        );
        Ok(Prompt {
            text,
            strategy: Strategy::Zero,
            target_id: item.id.clone(),
            example_ids: Vec::new(),
            n_distractors: self.n_distractors,
            language: item.language.clone(),
        })
    }

    /// Few-shot prompt with `examples` as demonstrations, in the given
    /// order. The target item's language decides the template set.
    pub fn few_shot(
        &self,
        item: &QuestionItem,
        examples: &[&QuestionItem],
        strategy: Strategy,
    ) -> Result<Prompt, PromptError> {
        self.check_count()?;
        if let Some(bad) = examples.iter().find(|e| e.distractors.is_empty()) {
            return Err(PromptError::ExampleWithoutDistractors { id: bad.id.clone() });
        }
        let t = self.templates.get(&item.language);
        let mut text = t.instruction_line(self.n_distractors);
        text.push('\n');
        for ex in examples {
            let list = enumerate_items(&ex.distractors, &t.item_separator, self.demo_style);
            let sep = match self.demo_style {
                ListStyle::Inline => ' ',
                ListStyle::Lines => '\n',
            };
            text.push('\n');
            text.push_str(&Self::question_lines(t, ex));
            text.push('\n');
            text.push_str(&t.incorrect_label);
            text.push(sep);
            text.push_str(&list);
            text.push('\n');
        }
        if !examples.is_empty() {
            text.push('\n');
        }
        text.push_str(&Self::question_lines(t, item));
        text.push('\n');
        text.push_str(&t.incorrect_label);
        Ok(Prompt {
            text,
            strategy,
            target_id: item.id.clone(),
            example_ids: examples.iter().map(|e| e.id.clone()).collect(),
            n_distractors: self.n_distractors,
            language: item.language.clone(),
        })
    }

    /// Few-shot prompt with a fixed list of bank ids as demonstrations.
    pub fn static_few_shot(
        &self,
        item: &QuestionItem,
        bank: &QuestionBank,
        example_ids: &[String],
    ) -> Result<Prompt, PromptError> {
        let examples = example_ids
            .iter()
            .map(|id| {
                bank.get(id)
                    .ok_or_else(|| PromptError::UnknownExample { id: id.clone() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.few_shot(item, &examples, Strategy::Static)
    }

    /// Few-shot prompt whose demonstrations are the top-`k` bank items
    /// ranked by `scorer`, most similar first.
    pub fn dynamic(
        &self,
        item: &QuestionItem,
        bank: &QuestionBank,
        rank_opts: &RankOptions,
        scorer: &dyn SimilarityScorer,
    ) -> Result<Prompt, PromptError> {
        self.check_count()?;
        let ranked = rank(item, bank, rank_opts, scorer)?;
        let examples: Vec<&QuestionItem> = ranked
            .ids()
            .map(|id| bank.get(id).expect("rank only returns bank ids"))
            .collect();
        self.few_shot(item, &examples, Strategy::Dynamic)
    }
}
