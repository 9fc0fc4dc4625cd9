//! Policies that drive rollouts.
//!
//! [`Policy`] is the rollout-side contract: given the question and the
//! trajectory so far, emit the next turn. [`DifferentiablePolicy`] adds
//! what the optimizer needs — parameter access, log-probabilities of
//! recorded decisions, and exact gradients of those log-probabilities.
//!
//! [`TabularPolicy`] is the trainable implementation: a softmax table over
//! a compact rollout state (unresolved hops, whether the last search hit,
//! remaining budget) and a four-action vocabulary. Its log-probabilities
//! are exact softmax values, which makes every gradient in the training
//! stack checkable against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chainworld::{find_fact_object, parse_chain_question, MAX_HOPS};
use crate::protocol::{Decision, RolloutConfig, SegmentKind, Trajectory};

/// What a policy sees when asked for its next turn.
pub struct TurnContext<'a> {
    pub question: &'a str,
    pub trajectory: &'a Trajectory,
    pub cfg: &'a RolloutConfig,
}

/// One emitted turn: raw tagged text plus the stochastic decision that
/// produced it (absent for fully scripted policies).
#[derive(Debug, Clone)]
pub struct TurnEmission {
    pub text: String,
    pub decision: Option<(Decision, f64)>,
}

impl TurnEmission {
    pub fn scripted(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            decision: None,
        }
    }
}

pub trait Policy {
    fn emit_turn(&self, ctx: &TurnContext, rng: &mut ChaCha8Rng) -> TurnEmission;
}

/// A policy whose recorded decisions can be re-scored and differentiated
/// under the current parameters.
pub trait DifferentiablePolicy: Policy {
    fn param_len(&self) -> usize;
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: &[f64]);
    /// Log-probability of `d` under the current parameters.
    fn decision_logp(&self, d: Decision) -> f64;
    /// Entropy of the action distribution in `d`'s state.
    fn decision_entropy(&self, d: Decision) -> f64;
    /// Accumulate `w_logp * d(logp)/d(params) + w_entropy * dH/d(params)`
    /// into `grad`.
    fn accumulate_decision_grad(&self, d: Decision, w_logp: f64, w_entropy: f64, grad: &mut [f64]);
}

// ---------------------------------------------------------------------
// Tabular softmax policy
// ---------------------------------------------------------------------

/// Actions of the tabular policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableAction {
    /// Query the next unresolved relation of the question chain.
    SearchNextHop,
    /// Query deliberately useless terms.
    SearchOffTopic,
    /// Answer with the entity resolved so far.
    AnswerCurrent,
    /// Answer "unknown".
    AnswerUnknown,
}

pub const TABLE_ACTIONS: [TableAction; 4] = [
    TableAction::SearchNextHop,
    TableAction::SearchOffTopic,
    TableAction::AnswerCurrent,
    TableAction::AnswerUnknown,
];

const N_ACTIONS: usize = TABLE_ACTIONS.len();
const HOPS_BUCKETS: usize = MAX_HOPS + 1; // 0..=4 unresolved hops
const HIT_BUCKETS: usize = 2;
const BUDGET_BUCKETS: usize = 6; // 0..=5 searches left
const N_STATES: usize = HOPS_BUCKETS * HIT_BUCKETS * BUDGET_BUCKETS;

/// Off-topic query; uses letters outside the chain-world name alphabet so
/// it can never collide with an entity.
const OFF_TOPIC_QUERY: &str = "jwq xwj qjx";

/// Rollout state the table conditions on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainProgress {
    /// Relations of the question in application order, when parseable.
    pub relations: Vec<String>,
    /// Entities resolved so far, head first.
    pub resolved: Vec<String>,
    /// Whether the most recent information segment advanced the chain.
    pub last_hit: bool,
}

impl ChainProgress {
    pub fn hops_remaining(&self) -> usize {
        self.relations.len().saturating_sub(self.resolved.len() - 1)
    }

    pub fn current_entity(&self) -> &str {
        self.resolved.last().map(String::as_str).unwrap_or("unknown")
    }

    pub fn next_relation(&self) -> Option<&str> {
        self.relations
            .get(self.resolved.len() - 1)
            .map(String::as_str)
    }
}

/// Replay the transcript to recover chain progress. Questions that parse
/// as neither phrasing yield a one-hop stand-in state with no relations.
pub fn chain_progress(question: &str, traj: &Trajectory) -> ChainProgress {
    let parsed = parse_chain_question(question).or_else(|| parse_synthetic_question(question));
    let (relations, head) = match parsed {
        Some((relations, head)) => (relations, head),
        None => (Vec::new(), "unknown".to_owned()),
    };
    let mut progress = ChainProgress {
        relations,
        resolved: vec![head],
        last_hit: false,
    };
    for seg in &traj.segments {
        if seg.kind != SegmentKind::Information {
            continue;
        }
        let mut advanced = false;
        while let Some(rel) = progress.next_relation() {
            let Some(next) = find_fact_object(&seg.text, rel, progress.current_entity()) else {
                break;
            };
            progress.resolved.push(next);
            advanced = true;
        }
        progress.last_hit = advanced;
    }
    progress
}

/// The alternative phrasing used for synthetic questions:
/// "From balko, follow capital then mayor: final entity?"
/// Kept deliberately terse so two questions over different chains share
/// few tokens.
pub fn synthetic_question(relations: &[&str], head: &str) -> String {
    format!("From {head}, follow {}: final entity?", relations.join(" then "))
}

/// Inverse of [`synthetic_question`].
pub fn parse_synthetic_question(question: &str) -> Option<(Vec<String>, String)> {
    let q = question.trim().to_lowercase();
    let q = q.strip_prefix("from ")?;
    let (head, rest) = q.split_once(", follow ")?;
    let rels = rest.strip_suffix(": final entity?")?;
    if head.contains(' ') {
        return None;
    }
    let relations: Vec<String> = rels.split(" then ").map(str::to_owned).collect();
    if relations.iter().any(|r| r.is_empty() || r.contains(' ')) {
        return None;
    }
    Some((relations, head.to_owned()))
}

/// Trainable softmax table over `(hops remaining, last hit, budget left)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    logits: Vec<f64>,
    pub temperature: f64,
}

impl TabularPolicy {
    /// All-zero logits: the uniform policy.
    pub fn uniform() -> Self {
        Self {
            logits: vec![0.0; N_STATES * N_ACTIONS],
            temperature: 1.0,
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let logits = (0..N_STATES * N_ACTIONS)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Self {
            logits,
            temperature: 1.0,
        }
    }

    /// Rebuild from a stored logit table.
    pub fn from_logits(logits: Vec<f64>, temperature: f64) -> Self {
        assert_eq!(logits.len(), N_STATES * N_ACTIONS, "logit table size");
        Self { logits, temperature }
    }

    pub fn n_states() -> usize {
        N_STATES
    }

    pub fn n_actions() -> usize {
        N_ACTIONS
    }

    pub fn state_index(hops_remaining: usize, last_hit: bool, budget_left: usize) -> usize {
        let h = hops_remaining.min(MAX_HOPS);
        let b = budget_left.min(BUDGET_BUCKETS - 1);
        (h * HIT_BUCKETS + last_hit as usize) * BUDGET_BUCKETS + b
    }

    fn action_probs(&self, state: usize) -> [f64; N_ACTIONS] {
        let z = &self.logits[state * N_ACTIONS..(state + 1) * N_ACTIONS];
        let t = self.temperature;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = [0.0; N_ACTIONS];
        let mut total = 0.0;
        for (p, &logit) in probs.iter_mut().zip(z) {
            *p = ((logit - max) / t).exp();
            total += *p;
        }
        for p in &mut probs {
            *p /= total;
        }
        probs
    }

    fn render_action(action: TableAction, progress: &ChainProgress, question: &str) -> String {
        match action {
            TableAction::SearchNextHop => {
                let query = match progress.next_relation() {
                    Some(rel) => format!("{rel} of {}", progress.current_entity()),
                    None if progress.relations.is_empty() => {
                        // Unparseable question: fall back to its leading words.
                        question
                            .split_whitespace()
                            .take(6)
                            .collect::<Vec<_>>()
                            .join(" ")
                    }
                    None => format!(
                        "{} of {}",
                        progress.relations.last().expect("chain complete"),
                        progress.current_entity()
                    ),
                };
                format!("<search>{query}</search>")
            }
            TableAction::SearchOffTopic => format!("<search>{OFF_TOPIC_QUERY}</search>"),
            TableAction::AnswerCurrent => {
                format!("<answer>{}</answer>", progress.current_entity())
            }
            TableAction::AnswerUnknown => "<answer>unknown</answer>".to_owned(),
        }
    }
}

impl Policy for TabularPolicy {
    fn emit_turn(&self, ctx: &TurnContext, rng: &mut ChaCha8Rng) -> TurnEmission {
        let progress = chain_progress(ctx.question, ctx.trajectory);
        let budget_left = ctx
            .cfg
            .action_budget
            .saturating_sub(ctx.trajectory.search_count());
        let state = Self::state_index(progress.hops_remaining(), progress.last_hit, budget_left);
        let probs = self.action_probs(state);

        let action_index = if self.temperature == 0.0 {
            // Degenerate temperature: greedy, first-max wins.
            probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        } else {
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = N_ACTIONS - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        };

        let decision = Decision {
            state_index: state,
            action_index,
        };
        TurnEmission {
            text: Self::render_action(TABLE_ACTIONS[action_index], &progress, ctx.question),
            decision: Some((decision, probs[action_index].ln())),
        }
    }
}

impl DifferentiablePolicy for TabularPolicy {
    fn param_len(&self) -> usize {
        self.logits.len()
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.logits.len());
        self.logits.copy_from_slice(params);
    }

    fn decision_logp(&self, d: Decision) -> f64 {
        self.action_probs(d.state_index)[d.action_index].ln()
    }

    fn decision_entropy(&self, d: Decision) -> f64 {
        let probs = self.action_probs(d.state_index);
        -probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    fn accumulate_decision_grad(
        &self,
        d: Decision,
        w_logp: f64,
        w_entropy: f64,
        grad: &mut [f64],
    ) {
        let probs = self.action_probs(d.state_index);
        let entropy = -probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>();
        let t = self.temperature;
        let base = d.state_index * N_ACTIONS;
        for (b, &p) in probs.iter().enumerate() {
            // d logp(a)/dz_b = (1[a=b] - p_b)/T
            let dlogp = ((b == d.action_index) as u8 as f64 - p) / t;
            // dH/dz_b = -p_b (ln p_b + H)/T
            let dent = if p > 0.0 { -p * (p.ln() + entropy) / t } else { 0.0 };
            grad[base + b] += w_logp * dlogp + w_entropy * dent;
        }
    }
}

// ---------------------------------------------------------------------
// Scripted policies
// ---------------------------------------------------------------------

/// Deterministic upper-bound policy: searches each unresolved hop in
/// order, then answers the resolved entity.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn emit_turn(&self, ctx: &TurnContext, _rng: &mut ChaCha8Rng) -> TurnEmission {
        let progress = chain_progress(ctx.question, ctx.trajectory);
        match progress.next_relation() {
            Some(rel) => TurnEmission::scripted(format!(
                "<think>need the {rel} of {0}</think><search>{rel} of {0}</search>",
                progress.current_entity()
            )),
            None => TurnEmission::scripted(format!(
                "<think>chain resolved</think><answer>{}</answer>",
                progress.current_entity()
            )),
        }
    }
}

/// Answers a fixed string on its first turn, never searching.
#[derive(Debug, Clone)]
pub struct ImmediateAnswerPolicy(pub String);

impl Policy for ImmediateAnswerPolicy {
    fn emit_turn(&self, _ctx: &TurnContext, _rng: &mut ChaCha8Rng) -> TurnEmission {
        TurnEmission::scripted(format!("<answer>{}</answer>", self.0))
    }
}

/// Searches forever; exists to exercise budget exhaustion.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverAnswerPolicy;

impl Policy for NeverAnswerPolicy {
    fn emit_turn(&self, ctx: &TurnContext, _rng: &mut ChaCha8Rng) -> TurnEmission {
        let progress = chain_progress(ctx.question, ctx.trajectory);
        let query = match progress.next_relation() {
            Some(rel) => format!("{rel} of {}", progress.current_entity()),
            None => OFF_TOPIC_QUERY.to_owned(),
        };
        TurnEmission::scripted(format!("<search>{query}</search>"))
    }
}

/// Replays a fixed sequence of raw turns (the last repeats forever).
/// Used to exercise protocol violations and custom transcripts.
#[derive(Debug, Clone)]
pub struct RawScriptPolicy {
    pub turns: Vec<String>,
}

impl Policy for RawScriptPolicy {
    fn emit_turn(&self, ctx: &TurnContext, _rng: &mut ChaCha8Rng) -> TurnEmission {
        let turn_index = ctx
            .trajectory
            .segments
            .iter()
            .filter(|s| s.origin == crate::protocol::Origin::Policy)
            .filter(|s| s.kind != SegmentKind::Think)
            .count();
        let text = self
            .turns
            .get(turn_index)
            .or_else(|| self.turns.last())
            .cloned()
            .unwrap_or_default();
        TurnEmission::scripted(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn state_indices_are_unique_and_bounded() {
        let mut seen = std::collections::HashSet::new();
        for h in 0..=MAX_HOPS {
            for hit in [false, true] {
                for b in 0..BUDGET_BUCKETS {
                    let idx = TabularPolicy::state_index(h, hit, b);
                    assert!(idx < N_STATES);
                    assert!(seen.insert(idx));
                }
            }
        }
        assert_eq!(seen.len(), N_STATES);
    }

    #[test]
    fn probs_sum_to_one_and_logp_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = TabularPolicy::random(&mut rng, 2.0);
        for state in 0..N_STATES {
            let probs = policy.action_probs(state);
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for a in 0..N_ACTIONS {
                let d = Decision {
                    state_index: state,
                    action_index: a,
                };
                assert!((policy.decision_logp(d) - probs[a].ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropy_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut policy = TabularPolicy::random(&mut rng, 1.5);
        let d = Decision {
            state_index: 3,
            action_index: 1,
        };
        let mut grad = vec![0.0; policy.param_len()];
        policy.accumulate_decision_grad(d, 0.0, 1.0, &mut grad);
        let h = 1e-6;
        let base = d.state_index * N_ACTIONS;
        for b in 0..N_ACTIONS {
            let mut params = policy.params().to_vec();
            params[base + b] += h;
            policy.set_params(&params);
            let up = policy.decision_entropy(d);
            params[base + b] -= 2.0 * h;
            policy.set_params(&params);
            let down = policy.decision_entropy(d);
            params[base + b] += h;
            policy.set_params(&params);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (grad[base + b] - fd).abs() < 1e-8,
                "entropy grad mismatch at {b}: {} vs {fd}",
                grad[base + b]
            );
        }
    }

    #[test]
    fn logp_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = TabularPolicy::random(&mut rng, 1.5);
        policy.temperature = 0.7;
        let d = Decision {
            state_index: 10,
            action_index: 2,
        };
        let mut grad = vec![0.0; policy.param_len()];
        policy.accumulate_decision_grad(d, 1.0, 0.0, &mut grad);
        let h = 1e-6;
        let base = d.state_index * N_ACTIONS;
        for b in 0..N_ACTIONS {
            let mut params = policy.params().to_vec();
            params[base + b] += h;
            policy.set_params(&params);
            let up = policy.decision_logp(d);
            params[base + b] -= 2.0 * h;
            policy.set_params(&params);
            let down = policy.decision_logp(d);
            params[base + b] += h;
            policy.set_params(&params);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (grad[base + b] - fd).abs() < 1e-8,
                "logp grad mismatch at {b}: {} vs {fd}",
                grad[base + b]
            );
        }
    }

    #[test]
    fn synthetic_question_round_trip() {
        let q = synthetic_question(&["capital", "mayor"], "balko");
        let (relations, head) = parse_synthetic_question(&q).unwrap();
        assert_eq!(relations, vec!["capital", "mayor"]);
        assert_eq!(head, "balko");
    }

    #[test]
    fn synthetic_phrasing_is_dissimilar_from_chain_phrasing() {
        let chain = crate::chainworld::chain_question(&["capital", "mayor"], "balko");
        let alt = synthetic_question(&["capital", "mayor"], "balko");
        let f1 = crate::metrics::token_f1(&chain, &alt).value();
        assert!(f1 < 0.7, "phrasings too similar: {f1}");
    }
}
