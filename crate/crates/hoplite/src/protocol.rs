//! Grammar, parser, and budget enforcement for the tagged rollout format.
//!
//! A trajectory interleaves policy-authored `<think>`, `<search>`, and
//! `<answer>` segments with environment-injected `<information>` segments.
//! One policy emission (a *turn*) may contain any number of thinks followed
//! by at most one search or one answer. Anything else — text outside tags,
//! an unclosed or nested tag, a policy-authored information block, or both
//! actions in one turn — is a format violation that terminates the
//! trajectory.
//!
//! Tokens are whitespace/tag-boundary symbols: each tag is one token and
//! tag contents split on whitespace. Environment-origin tokens carry mask
//! 0 and are excluded from every training sum. A pluggable [`Tokenizer`]
//! hook exists for model-specific token notions.

use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::index::{Document, RetrievalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Think,
    Search,
    Information,
    Answer,
}

impl SegmentKind {
    pub fn open_tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "<think>",
            SegmentKind::Search => "<search>",
            SegmentKind::Information => "<information>",
            SegmentKind::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "</think>",
            SegmentKind::Search => "</search>",
            SegmentKind::Information => "</information>",
            SegmentKind::Answer => "</answer>",
        }
    }
}

const ALL_KINDS: [SegmentKind; 4] = [
    SegmentKind::Think,
    SegmentKind::Search,
    SegmentKind::Information,
    SegmentKind::Answer,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Policy,
    Environment,
}

/// One tagged span. `doc_ids` is populated only for information segments
/// and records every document injected, even those later cut by the
/// information token cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub doc_ids: Vec<String>,
}

impl Segment {
    pub fn policy(kind: SegmentKind, text: impl Into<String>) -> Self {
        debug_assert!(kind != SegmentKind::Information);
        Self {
            kind,
            text: text.into(),
            origin: Origin::Policy,
            doc_ids: Vec::new(),
        }
    }

    fn information(text: String, doc_ids: Vec<String>) -> Self {
        Self {
            kind: SegmentKind::Information,
            text,
            origin: Origin::Environment,
            doc_ids,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{}{}{}",
            self.kind.open_tag(),
            self.text,
            self.kind.close_tag()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatViolationKind {
    UnclosedTag,
    NestedTag,
    StrayCloseTag,
    TextOutsideTags,
    /// The policy authored an `<information>` block.
    HallucinatedInformation,
    /// More than one search/answer action in a single turn.
    MultipleActions,
    /// Content after a closed answer tag.
    SegmentAfterAnswer,
    /// A turn with no segments at all.
    EmptyTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    BudgetExhausted,
    FormatViolation(FormatViolationKind),
}

/// Identifies one stochastic choice made by a policy: which action it took
/// in which of its internal states. Environment tokens never carry one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub state_index: usize,
    pub action_index: usize,
}

/// One symbol of the trajectory with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub origin: Origin,
    /// Index into [`Trajectory::segments`].
    pub segment: usize,
    /// Present on the first token of a turn that carried a policy decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    /// Log-probability of the decision under the emitting policy, recorded
    /// at sampling time. Zero for deterministic continuation tokens.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub logp_emit: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Rollout limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Maximum number of search calls per trajectory.
    pub action_budget: usize,
    /// Documents returned per search turn.
    pub retrieval_k: usize,
    /// Per-turn cap on policy emission tokens.
    pub max_segment_tokens: usize,
    /// Cap on tokens injected per information segment.
    pub max_information_tokens: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            action_budget: 5,
            retrieval_k: 5,
            max_segment_tokens: 500,
            max_information_tokens: 2048,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("action_budget", self.action_budget),
            ("retrieval_k", self.retrieval_k),
            ("max_segment_tokens", self.max_segment_tokens),
            ("max_information_tokens", self.max_information_tokens),
        ] {
            if v < 1 {
                return Err(format!("rollout.{name} must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetDecision {
    Continue,
    ForceTerminate,
}

/// Token notion used to index the loss. The default splits on whitespace
/// and tag boundaries; real language models plug in their own.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Default tokenizer: tags are single tokens, contents split on whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct TagWhitespaceTokenizer;

impl Tokenizer for TagWhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some((tag, after)) = leading_tag(rest) {
                out.push(tag.to_owned());
                rest = after;
                continue;
            }
            // Scan up to the next possible tag start; a leading non-tag '<'
            // is ordinary text.
            let cut = match rest.find('<') {
                Some(0) => rest[1..].find('<').map(|i| i + 1).unwrap_or(rest.len()),
                Some(i) => i,
                None => rest.len(),
            };
            let (chunk, after) = rest.split_at(cut);
            out.extend(chunk.split_whitespace().map(str::to_owned));
            rest = after;
        }
        out
    }
}

fn leading_tag(s: &str) -> Option<(&str, &str)> {
    for kind in ALL_KINDS {
        for tag in [kind.open_tag(), kind.close_tag()] {
            if let Some(after) = s.strip_prefix(tag) {
                return Some((&s[..tag.len()], after));
            }
        }
    }
    None
}

/// Count tokens of a bare text span (no tags) under the default notion.
pub fn text_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Truncate `text` to at most `max_tokens` whitespace tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        return text.trim().to_owned();
    }
    tokens[..max_tokens].join(" ")
}

/// A complete or in-progress rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: String,
    pub segments: Vec<Segment>,
    pub tokens: Vec<TokenRecord>,
    pub terminated_by: Option<Termination>,
}

impl Trajectory {
    pub fn new(prompt_id: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            segments: Vec::new(),
            tokens: Vec::new(),
            terminated_by: None,
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated_by.is_some()
    }

    /// Token mask: 1 on policy-origin tokens, 0 on environment-origin ones.
    pub fn mask(&self) -> Vec<u8> {
        self.tokens
            .iter()
            .map(|t| (t.origin == Origin::Policy) as u8)
            .collect()
    }

    /// Mask as alternating `(value, run_length)` pairs for compact dumps.
    pub fn mask_run_lengths(&self) -> Vec<(u8, usize)> {
        let mut runs: Vec<(u8, usize)> = Vec::new();
        for bit in self.mask() {
            match runs.last_mut() {
                Some((v, n)) if *v == bit => *n += 1,
                _ => runs.push((bit, 1)),
            }
        }
        runs
    }

    pub fn search_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Search)
            .count()
    }

    pub fn answer(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.text.as_str())
    }

    /// Document ids across all information segments, in injection order,
    /// deduplicated.
    pub fn retrieved_doc_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for seg in &self.segments {
            for id in &seg.doc_ids {
                if seen.insert(id.clone()) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Append one parsed policy turn. The turn's decision, when present,
    /// rides on the turn's first token.
    pub fn push_policy_turn(
        &mut self,
        segments: Vec<Segment>,
        decision: Option<(Decision, f64)>,
    ) -> Result<(), ProtocolError> {
        if self.is_terminated() {
            return Err(ProtocolError::AlreadyTerminated);
        }
        let mut decision = decision;
        for seg in segments {
            debug_assert_eq!(seg.origin, Origin::Policy);
            let seg_index = self.segments.len();
            let answered = seg.kind == SegmentKind::Answer;
            self.push_segment_tokens(&seg, seg_index, &mut decision);
            self.segments.push(seg);
            if answered {
                self.terminated_by = Some(Termination::Answer);
            }
        }
        Ok(())
    }

    /// Inject retrieval results after a search turn. The new segment has
    /// environment origin, so all of its tokens carry mask 0. Content is
    /// cut at the information token cap; `doc_ids` still records every
    /// returned document. An empty result injects an explicit marker.
    pub fn append_information(
        &mut self,
        result: &RetrievalResult,
        docs: &[Document],
        cfg: &RolloutConfig,
    ) -> Result<(), ProtocolError> {
        if self.segments.last().map(|s| s.kind) != Some(SegmentKind::Search) {
            return Err(ProtocolError::InformationWithoutSearch);
        }
        let text = if docs.is_empty() {
            "no results found".to_owned()
        } else {
            let joined = docs
                .iter()
                .map(|d| format!("[{}] {}: {}", d.id, d.title, d.body))
                .collect::<Vec<_>>()
                .join(" ");
            truncate_tokens(&joined, cfg.max_information_tokens)
        };
        let seg = Segment::information(text, result.doc_ids());
        let seg_index = self.segments.len();
        self.push_segment_tokens(&seg, seg_index, &mut None);
        self.segments.push(seg);
        Ok(())
    }

    /// Continuation decision against the action budget: a trajectory stops
    /// when it has answered or exhausted its search budget.
    pub fn check_budget(&self, cfg: &RolloutConfig) -> BudgetDecision {
        if self.answer().is_some() || self.search_count() >= cfg.action_budget {
            BudgetDecision::ForceTerminate
        } else {
            BudgetDecision::Continue
        }
    }

    pub fn terminate(&mut self, cause: Termination) {
        if self.terminated_by.is_none() {
            self.terminated_by = Some(cause);
        }
    }

    /// Render the full trajectory back to tagged text.
    pub fn render(&self) -> String {
        self.segments.iter().map(Segment::render).collect()
    }

    fn push_segment_tokens(
        &mut self,
        seg: &Segment,
        seg_index: usize,
        decision: &mut Option<(Decision, f64)>,
    ) {
        let mut push = |text: String| {
            let (d, logp) = match decision.take() {
                Some((d, logp)) => (Some(d), logp),
                None => (None, 0.0),
            };
            self.tokens.push(TokenRecord {
                text,
                origin: seg.origin,
                segment: seg_index,
                decision: d,
                logp_emit: logp,
            });
        };
        push(seg.kind.open_tag().to_owned());
        for word in seg.text.split_whitespace() {
            push(word.to_owned());
        }
        push(seg.kind.close_tag().to_owned());
    }

    /// Replace the text of an information segment and rebuild its tokens
    /// in place. Used to probe that masked content cannot influence
    /// training quantities.
    pub fn replace_information_text(&mut self, seg_index: usize, new_text: impl Into<String>) {
        assert_eq!(self.segments[seg_index].kind, SegmentKind::Information);
        let new_text = new_text.into();
        let mut rebuilt: Vec<TokenRecord> = Vec::with_capacity(self.tokens.len());
        for tok in &self.tokens {
            if tok.segment != seg_index {
                rebuilt.push(tok.clone());
                continue;
            }
            // Emit the replacement exactly once, at the segment's position.
            if rebuilt.last().map(|t| t.segment) == Some(seg_index) {
                continue;
            }
            rebuilt.push(TokenRecord {
                text: SegmentKind::Information.open_tag().to_owned(),
                origin: Origin::Environment,
                segment: seg_index,
                decision: None,
                logp_emit: 0.0,
            });
            for word in new_text.split_whitespace() {
                rebuilt.push(TokenRecord {
                    text: word.to_owned(),
                    origin: Origin::Environment,
                    segment: seg_index,
                    decision: None,
                    logp_emit: 0.0,
                });
            }
            rebuilt.push(TokenRecord {
                text: SegmentKind::Information.close_tag().to_owned(),
                origin: Origin::Environment,
                segment: seg_index,
                decision: None,
                logp_emit: 0.0,
            });
        }
        self.tokens = rebuilt;
        self.segments[seg_index].text = new_text;
    }
}

/// Parse one policy emission into segments.
///
/// Accepts optional thinks followed by at most one search **or** one
/// answer. Information tags, nested or unclosed tags, stray closers, and
/// bare text between tags are violations; the caller terminates the
/// trajectory with the returned kind.
pub fn parse_turn(raw: &str) -> Result<Vec<Segment>, FormatViolationKind> {
    let segments = scan_tagged(raw)?;
    if segments.is_empty() {
        return Err(FormatViolationKind::EmptyTurn);
    }
    let mut action_seen = false;
    let mut answer_seen = false;
    for seg in &segments {
        if answer_seen {
            return Err(FormatViolationKind::SegmentAfterAnswer);
        }
        match seg.kind {
            SegmentKind::Information => return Err(FormatViolationKind::HallucinatedInformation),
            SegmentKind::Search | SegmentKind::Answer => {
                if action_seen {
                    return Err(FormatViolationKind::MultipleActions);
                }
                action_seen = true;
                answer_seen = seg.kind == SegmentKind::Answer;
            }
            SegmentKind::Think => {
                if action_seen {
                    // A think after a search would stall the turn loop.
                    return Err(FormatViolationKind::MultipleActions);
                }
            }
        }
    }
    Ok(segments)
}

/// Parse a full rendered trajectory (information segments allowed, with
/// environment origin). Inverse of [`Trajectory::render`] for well-formed
/// content.
pub fn parse_transcript(raw: &str) -> Result<Vec<Segment>, FormatViolationKind> {
    let mut segments = scan_tagged(raw)?;
    for seg in &mut segments {
        if seg.kind == SegmentKind::Information {
            seg.origin = Origin::Environment;
        }
    }
    Ok(segments)
}

fn scan_tagged(raw: &str) -> Result<Vec<Segment>, FormatViolationKind> {
    let mut segments = Vec::new();
    let mut rest = raw;
    loop {
        // Between tags only whitespace is legal.
        let trimmed = rest.trim_start();
        if trimmed.is_empty() {
            return Ok(segments);
        }
        let open = ALL_KINDS
            .iter()
            .find(|k| trimmed.starts_with(k.open_tag()))
            .copied();
        let kind = match open {
            Some(kind) => kind,
            None => {
                let is_stray_close = ALL_KINDS.iter().any(|k| trimmed.starts_with(k.close_tag()));
                return Err(if is_stray_close {
                    FormatViolationKind::StrayCloseTag
                } else {
                    FormatViolationKind::TextOutsideTags
                });
            }
        };
        let content_and_on = &trimmed[kind.open_tag().len()..];
        let close_at = match content_and_on.find(kind.close_tag()) {
            Some(at) => at,
            None => return Err(FormatViolationKind::UnclosedTag),
        };
        let content = &content_and_on[..close_at];
        if ALL_KINDS
            .iter()
            .any(|k| content.contains(k.open_tag()) || content.contains(k.close_tag()))
        {
            return Err(FormatViolationKind::NestedTag);
        }
        segments.push(Segment {
            kind,
            text: content.trim().to_owned(),
            origin: Origin::Policy,
            doc_ids: Vec::new(),
        });
        rest = &content_and_on[close_at + kind.close_tag().len()..];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::ScoredDoc;
    use proptest::prelude::*;

    fn d(id: &str, title: &str, body: &str) -> Document {
        Document {
            id: id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    fn result_of(ids: &[&str]) -> RetrievalResult {
        RetrievalResult {
            query: "q".into(),
            ranked: ids
                .iter()
                .map(|id| ScoredDoc {
                    id: id.to_string(),
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn parse_think_then_search() {
        let segs = parse_turn("<think>need river</think><search>longest river</search>").unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].kind, SegmentKind::Think);
        assert_eq!(segs[0].text, "need river");
        assert_eq!(segs[1].kind, SegmentKind::Search);
        assert_eq!(segs[1].text, "longest river");
        assert!(segs.iter().all(|s| s.origin == Origin::Policy));
    }

    #[test]
    fn parse_rejects_policy_information() {
        let err = parse_turn("<think>x</think><information>fake</information>").unwrap_err();
        assert_eq!(err, FormatViolationKind::HallucinatedInformation);
    }

    #[test]
    fn parse_terminal_answer_only() {
        let segs = parse_turn("<answer>Pretoria</answer>").unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].kind, SegmentKind::Answer);
        assert_eq!(segs[0].text, "Pretoria");
    }

    #[test]
    fn parse_violations() {
        use FormatViolationKind::*;
        let cases = [
            ("<think>open", UnclosedTag),
            ("<think>a<search>b</search></think>", NestedTag),
            ("</think>", StrayCloseTag),
            ("hello <search>x</search>", TextOutsideTags),
            ("<search>a</search><answer>b</answer>", MultipleActions),
            ("<search>a</search><search>b</search>", MultipleActions),
            ("<answer>a</answer><think>b</think>", SegmentAfterAnswer),
            ("", EmptyTurn),
            ("   ", EmptyTurn),
        ];
        for (raw, want) in cases {
            assert_eq!(parse_turn(raw).unwrap_err(), want, "input {raw:?}");
        }
    }

    #[test]
    fn parse_allows_whitespace_between_tags() {
        let segs = parse_turn("<think> a </think>\n <search> b </search>").unwrap();
        assert_eq!(segs[0].text, "a");
        assert_eq!(segs[1].text, "b");
    }

    #[test]
    fn information_tokens_are_masked() {
        let mut traj = Trajectory::new("p1");
        traj.push_policy_turn(
            vec![Segment::policy(SegmentKind::Search, "river")],
            Some((Decision { state_index: 0, action_index: 0 }, -0.5)),
        )
        .unwrap();
        traj.append_information(
            &result_of(&["d1", "d2", "d3"]),
            &[
                d("d1", "T1", "body one"),
                d("d2", "T2", "body two"),
                d("d3", "T3", "body three"),
            ],
            &RolloutConfig::default(),
        )
        .unwrap();
        let mask = traj.mask();
        let info_start = 3; // <search> river </search>
        assert!(mask[..info_start].iter().all(|&m| m == 1));
        assert!(mask[info_start..].iter().all(|&m| m == 0));
        assert_eq!(traj.retrieved_doc_ids(), vec!["d1", "d2", "d3"]);
        assert_eq!(traj.tokens[0].decision.unwrap().action_index, 0);
        assert_eq!(traj.tokens[0].logp_emit, -0.5);
        assert!(traj.tokens[1..].iter().all(|t| t.decision.is_none()));
    }

    #[test]
    fn information_truncates_at_token_cap() {
        let mut traj = Trajectory::new("p1");
        traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, "q")], None)
            .unwrap();
        let long_body = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let cfg = RolloutConfig {
            max_information_tokens: 10,
            ..Default::default()
        };
        traj.append_information(
            &result_of(&["d1"]),
            &[Document { id: "d1".into(), title: "T".into(), body: long_body }],
            &cfg,
        )
        .unwrap();
        let info = traj.segments.last().unwrap();
        assert_eq!(text_token_count(&info.text), 10);
        // The id is still credited even though the text was cut.
        assert_eq!(info.doc_ids, vec!["d1"]);
    }

    #[test]
    fn information_empty_result_marker() {
        let mut traj = Trajectory::new("p1");
        traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, "q")], None)
            .unwrap();
        traj.append_information(&result_of(&[]), &[], &RolloutConfig::default())
            .unwrap();
        assert_eq!(traj.segments.last().unwrap().text, "no results found");
        assert!(traj.segments.last().unwrap().doc_ids.is_empty());
    }

    #[test]
    fn information_requires_preceding_search() {
        let mut traj = Trajectory::new("p1");
        let err = traj
            .append_information(&result_of(&[]), &[], &RolloutConfig::default())
            .unwrap_err();
        assert!(matches!(err, ProtocolError::InformationWithoutSearch));
    }

    #[test]
    fn budget_decisions() {
        let cfg = RolloutConfig {
            action_budget: 5,
            ..Default::default()
        };
        let mut traj = Trajectory::new("p");
        for _ in 0..4 {
            traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, "q")], None)
                .unwrap();
        }
        assert_eq!(traj.check_budget(&cfg), BudgetDecision::Continue);
        traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, "q")], None)
            .unwrap();
        assert_eq!(traj.check_budget(&cfg), BudgetDecision::ForceTerminate);

        let mut answered = Trajectory::new("p");
        answered
            .push_policy_turn(vec![Segment::policy(SegmentKind::Answer, "x")], None)
            .unwrap();
        assert_eq!(answered.check_budget(&cfg), BudgetDecision::ForceTerminate);
        assert_eq!(answered.terminated_by, Some(Termination::Answer));
    }

    #[test]
    fn mask_sum_equals_policy_token_count() {
        let mut traj = Trajectory::new("p");
        traj.push_policy_turn(
            vec![
                Segment::policy(SegmentKind::Think, "a b"),
                Segment::policy(SegmentKind::Search, "c"),
            ],
            None,
        )
        .unwrap();
        traj.append_information(
            &result_of(&["d1"]),
            &[d("d1", "T", "x y z")],
            &RolloutConfig::default(),
        )
        .unwrap();
        let mask_sum: usize = traj.mask().iter().map(|&m| m as usize).sum();
        let policy_tokens = traj
            .tokens
            .iter()
            .filter(|t| t.origin == Origin::Policy)
            .count();
        assert_eq!(mask_sum, policy_tokens);
    }

    #[test]
    fn replace_information_text_rebuilds_tokens() {
        let mut traj = Trajectory::new("p");
        traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, "q")], None)
            .unwrap();
        traj.append_information(
            &result_of(&["d1"]),
            &[d("d1", "T", "old words here")],
            &RolloutConfig::default(),
        )
        .unwrap();
        traj.push_policy_turn(vec![Segment::policy(SegmentKind::Answer, "done")], None)
            .unwrap();
        let policy_before: Vec<TokenRecord> = traj
            .tokens
            .iter()
            .filter(|t| t.origin == Origin::Policy)
            .cloned()
            .collect();
        traj.replace_information_text(1, "completely different and much longer replacement text");
        let policy_after: Vec<TokenRecord> = traj
            .tokens
            .iter()
            .filter(|t| t.origin == Origin::Policy)
            .cloned()
            .collect();
        assert_eq!(policy_before, policy_after);
        assert!(traj.render().contains("completely different"));
    }

    fn tagfree_text() -> impl Strategy<Value = String> {
        "[a-z ]{1,20}".prop_map(|s| s.trim().to_owned()).prop_filter("nonempty", |s| !s.is_empty())
    }

    proptest! {
        #[test]
        fn turn_round_trip(thinks in prop::collection::vec(tagfree_text(), 0..3), action in tagfree_text(), is_answer in any::<bool>()) {
            let mut segs: Vec<Segment> = thinks
                .iter()
                .map(|t| Segment::policy(SegmentKind::Think, t.clone()))
                .collect();
            let kind = if is_answer { SegmentKind::Answer } else { SegmentKind::Search };
            segs.push(Segment::policy(kind, action));
            let rendered: String = segs.iter().map(Segment::render).collect();
            let reparsed = parse_turn(&rendered).unwrap();
            prop_assert_eq!(segs, reparsed);
        }

        #[test]
        fn transcript_round_trip(words in prop::collection::vec(tagfree_text(), 1..4)) {
            let mut traj = Trajectory::new("p");
            for w in &words {
                traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, w.clone())], None).unwrap();
                traj.append_information(
                    &result_of(&["d1"]),
                    &[Document { id: "d1".into(), title: "T".into(), body: format!("about {w}") }],
                    &RolloutConfig::default(),
                ).unwrap();
            }
            traj.push_policy_turn(vec![Segment::policy(SegmentKind::Answer, words[0].clone())], None).unwrap();
            let reparsed = parse_transcript(&traj.render()).unwrap();
            let reparsed_with_ids: Vec<(SegmentKind, String, Origin)> =
                reparsed.iter().map(|s| (s.kind, s.text.clone(), s.origin)).collect();
            let original: Vec<(SegmentKind, String, Origin)> =
                traj.segments.iter().map(|s| (s.kind, s.text.clone(), s.origin)).collect();
            prop_assert_eq!(original, reparsed_with_ids);
        }
    }
}
