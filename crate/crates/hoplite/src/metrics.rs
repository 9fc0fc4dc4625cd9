//! Answer normalization and the scalar metrics every other module scores with:
//! exact match, token-level F1, and gold-document recall.
//!
//! Normalization follows the usual extractive-QA convention: lowercase,
//! strip punctuation, drop English articles, collapse whitespace. The
//! refusal sentinel emitted by the answer-verification prompt is detected
//! before normalization and treated as an empty answer.

use std::collections::BTreeSet;
use std::collections::HashMap;

use crate::error::MetricError;

/// Verbatim refusal string mandated by the answer-verification prompt.
pub const REFUSAL_SENTINEL: &str = "Answer not found in documents";

/// A score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MetricScore(f64);

impl MetricScore {
    /// Panics if `value` is outside `[0, 1]`; metric code must never
    /// produce an out-of-range score.
    pub fn new(value: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&value),
            "metric score {value} outside [0, 1]"
        );
        Self(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// An answer string reduced to comparable word tokens.
///
/// Contains no empty tokens, no punctuation-only tokens, and no articles.
/// Normalizing an already-normalized string yields identical tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedAnswer {
    pub tokens: Vec<String>,
}

impl NormalizedAnswer {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// True when `raw` is the refusal sentinel, ignoring case, surrounding
/// whitespace, and a trailing period (both appear in the wild).
pub fn is_refusal(raw: &str) -> bool {
    let trimmed = raw.trim().trim_end_matches('.');
    trimmed.eq_ignore_ascii_case(REFUSAL_SENTINEL)
}

/// Lowercase, strip punctuation, drop articles, whitespace-split.
///
/// The refusal sentinel normalizes to an empty token list so it never
/// accidentally matches a gold answer. Empty input yields an empty list.
pub fn normalize(raw: &str) -> NormalizedAnswer {
    if is_refusal(raw) {
        return NormalizedAnswer { tokens: Vec::new() };
    }
    let lowered = raw.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    let tokens = no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect();
    NormalizedAnswer { tokens }
}

/// Binary correctness: 1 if the normalized token lists are identical.
pub fn exact_match(pred: &str, gold: &str) -> MetricScore {
    if normalize(pred).tokens == normalize(gold).tokens {
        MetricScore::new(1.0)
    } else {
        MetricScore::new(0.0)
    }
}

/// Token-level F1 over the multiset overlap of normalized tokens.
///
/// Count-aware: repeated words only match as often as they appear on both
/// sides. Returns 1 when both sides normalize to empty, 0 when exactly one
/// side is empty.
pub fn token_f1(pred: &str, gold: &str) -> MetricScore {
    let p = normalize(pred).tokens;
    let g = normalize(gold).tokens;
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return MetricScore::new(1.0),
        (true, false) | (false, true) => return MetricScore::new(0.0),
        (false, false) => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for tok in &g {
        *gold_counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for tok in &p {
        if let Some(count) = gold_counts.get_mut(tok.as_str()) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return MetricScore::new(0.0);
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    MetricScore::new(2.0 * precision * recall / (precision + recall))
}

/// Fraction of gold documents present in the retrieved set.
///
/// Errors when `gold_ids` is empty: the metric is undefined without a
/// ground-truth set.
pub fn doc_recall(
    retrieved_ids: &BTreeSet<String>,
    gold_ids: &BTreeSet<String>,
) -> Result<MetricScore, MetricError> {
    if gold_ids.is_empty() {
        return Err(MetricError::EmptyGoldSet);
    }
    let hit = gold_ids.intersection(retrieved_ids).count();
    Ok(MetricScore::new(hit as f64 / gold_ids.len() as f64))
}
