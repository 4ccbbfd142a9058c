//! Distractor generation for multiple-choice questions with retrieved
//! in-context examples, plus the annotation and statistics tooling used to
//! judge distractor quality.

pub mod bank;
pub mod eval;
pub mod jsonl;
pub mod llm;
pub mod mt5;
pub mod parser;
pub mod prompt;
pub mod retrieval;
pub mod session;
pub mod text;

pub use bank::{QuestionBank, QuestionItem};
pub use parser::DistractorSet;
pub use prompt::{Prompt, PromptBuilder, Strategy, Templates};
