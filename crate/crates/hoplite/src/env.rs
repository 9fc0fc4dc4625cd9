//! The rollout loop: policy, retriever, and protocol bound together.
//!
//! Every search turn is answered with the top `retrieval_k` documents
//! wrapped in an information segment; emissions that fail the turn
//! grammar terminate the trajectory as format violations; the loop stops
//! on answer or when the search budget runs out. Rollouts are pure
//! functions of (policy parameters, instance, seed), so groups replay
//! bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::QaInstance;
use crate::error::EnvError;
use crate::index::{Bm25Index, Document};
use crate::policy::{Policy, TurnContext};
use crate::protocol::{
    parse_turn, BudgetDecision, RolloutConfig, SegmentKind, TagWhitespaceTokenizer, Termination,
    Tokenizer, Trajectory,
};

/// Mix a stream id into a base seed (splitmix64 finalizer). Every
/// consumer of randomness derives its own stream from the run seed, so
/// resuming at step N replays the exact streams of a fresh run.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run one trajectory to termination.
pub fn rollout<P: Policy>(
    policy: &P,
    instance: &QaInstance,
    index: &Bm25Index,
    cfg: &RolloutConfig,
    seed: u64,
) -> Trajectory {
    let mut traj = Trajectory::new(instance.id.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokenizer = TagWhitespaceTokenizer;
    // Think-only turns make no progress against the search budget; cap
    // total turns so adversarial policies cannot spin forever.
    let max_turns = cfg.action_budget * 2 + 2;

    for _ in 0..max_turns {
        if traj.check_budget(cfg) == BudgetDecision::ForceTerminate {
            break;
        }
        let ctx = TurnContext {
            question: &instance.question,
            trajectory: &traj,
            cfg,
        };
        let emission = policy.emit_turn(&ctx, &mut rng);

        // Emulate the generation cap: cut the raw emission at the token
        // limit before parsing. A cut that severs a tag surfaces as an
        // unclosed-tag violation, exactly like a truncated generation.
        let tokens = tokenizer.tokenize(&emission.text);
        let text = if tokens.len() > cfg.max_segment_tokens {
            tokens[..cfg.max_segment_tokens].join(" ")
        } else {
            emission.text.clone()
        };

        let segments = match parse_turn(&text) {
            Ok(segments) => segments,
            Err(kind) => {
                traj.terminate(Termination::FormatViolation(kind));
                break;
            }
        };
        let searched = segments.iter().any(|s| s.kind == SegmentKind::Search);
        traj.push_policy_turn(segments, emission.decision)
            .expect("trajectory not terminated");
        if traj.is_terminated() {
            break;
        }
        if searched {
            let query = traj
                .segments
                .last()
                .expect("search segment just pushed")
                .text
                .clone();
            let result = index.search(&query, cfg.retrieval_k);
            let docs: Vec<Document> = result
                .ranked
                .iter()
                .filter_map(|s| index.doc(&s.id).cloned())
                .collect();
            traj.append_information(&result, &docs, cfg)
                .expect("search segment precedes information");
        }
    }
    if !traj.is_terminated() {
        traj.terminate(Termination::BudgetExhausted);
    }
    traj
}

/// Sample `group_size` independent trajectories for one instance with
/// per-member derived seeds, in deterministic order.
pub fn rollout_group<P: Policy>(
    policy: &P,
    instance: &QaInstance,
    index: &Bm25Index,
    cfg: &RolloutConfig,
    group_size: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, EnvError> {
    if group_size < 2 {
        return Err(EnvError::GroupTooSmall(group_size));
    }
    Ok((0..group_size)
        .map(|member| {
            rollout(
                policy,
                instance,
                index,
                cfg,
                derive_seed(seed, member as u64),
            )
        })
        .collect())
}
