//! Prompt templates shipped as text assets.
//!
//! Templates use `{name}` slots filled by the helpers below. The refusal
//! sentinel inside the verification template is the exact string
//! [`crate::metrics::REFUSAL_SENTINEL`] checks for.

use crate::index::Document;

pub const QUESTION_GENERATION: &str = include_str!("assets/question_generation.txt");
pub const ANSWER_VERIFICATION: &str = include_str!("assets/answer_verification.txt");
pub const ROLLOUT_INSTRUCTIONS: &str = include_str!("assets/rollout_instructions.txt");

/// Render documents the way every prompt embeds them.
pub fn render_documents(docs: &[Document]) -> String {
    docs.iter()
        .map(|d| format!("[{}] {}: {}", d.id, d.title, d.body))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One in-context exemplar: a document set paired with its question. The
/// markers differ from the target-section delimiters so clients can
/// locate the target documents unambiguously.
pub fn render_exemplar(docs: &[Document], question: &str) -> String {
    format!(
        "Example documents:\n{}\nExample question: {}\n",
        render_documents(docs),
        question
    )
}

pub fn question_generation_prompt(
    exemplars: &[String],
    target_docs: &[Document],
    original_question: &str,
) -> String {
    QUESTION_GENERATION
        .replace("{exemplars}", exemplars.join("\n").trim_end())
        .replace("{documents}", &render_documents(target_docs))
        .replace("{original_question}", original_question)
}

pub fn answer_verification_prompt(docs: &[Document], question: &str) -> String {
    ANSWER_VERIFICATION
        .replace("{documents}", &render_documents(docs))
        .replace("{question}", question)
}

pub fn rollout_instructions(question: &str) -> String {
    ROLLOUT_INSTRUCTIONS.replace("{question}", question)
}
