//! Composite trajectory reward: the mean of answer exact-match and
//! cumulative gold-document recall, plus the token-F1 score used by the
//! mining stage.
//!
//! Recall is a coverage statement — the union of document ids across all
//! information segments, so re-retrieving a gold document never double
//! counts. Trajectories that died on a format violation keep the recall
//! they earned (an optional strict mode zeroes everything for ablation):
//! the reward carries no format term, and zeroing recall would reintroduce
//! exactly the sparse-credit problem the recall term exists to fix.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::QaInstance;
use crate::metrics::{doc_recall, exact_match, token_f1};
use crate::protocol::{Termination, Trajectory};

/// Scoring knobs. `strict_format` zeroes the whole reward on format
/// violations instead of keeping earned recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RewardOptions {
    pub strict_format: bool,
}

/// Per-trajectory reward decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Binary answer correctness.
    pub r_em: f64,
    /// Fraction of gold documents retrieved across all search turns.
    pub r_recall: f64,
    /// `(r_em + r_recall) / 2`.
    pub r_composite: f64,
    /// Token-level F1 of the answer; the mining signal.
    pub r_f1: f64,
    /// Gold documents that actually showed up.
    pub retrieved_gold: BTreeSet<String>,
}

/// Score a terminated trajectory against its instance.
pub fn score_trajectory(traj: &Trajectory, instance: &QaInstance) -> RewardBreakdown {
    score_trajectory_with(traj, instance, RewardOptions::default())
}

pub fn score_trajectory_with(
    traj: &Trajectory,
    instance: &QaInstance,
    opts: RewardOptions,
) -> RewardBreakdown {
    debug_assert!(traj.is_terminated(), "reward expects a terminated trajectory");
    let violated = matches!(traj.terminated_by, Some(Termination::FormatViolation(_)));

    let (r_em, r_f1) = match traj.answer() {
        Some(answer) => (
            exact_match(answer, &instance.gold_answer).value(),
            token_f1(answer, &instance.gold_answer).value(),
        ),
        None => (0.0, 0.0),
    };

    let retrieved: BTreeSet<String> = traj.retrieved_doc_ids().into_iter().collect();
    let retrieved_gold: BTreeSet<String> = retrieved
        .intersection(&instance.gold_doc_ids)
        .cloned()
        .collect();
    let r_recall = doc_recall(&retrieved, &instance.gold_doc_ids)
        .expect("instances carry non-empty gold sets")
        .value();

    if violated && opts.strict_format {
        return RewardBreakdown {
            r_em: 0.0,
            r_recall: 0.0,
            r_composite: 0.0,
            r_f1: 0.0,
            retrieved_gold,
        };
    }

    RewardBreakdown {
        r_em,
        r_recall,
        r_composite: (r_em + r_recall) / 2.0,
        r_f1,
        retrieved_gold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::index::{RetrievalResult, ScoredDoc};
    use crate::protocol::{RolloutConfig, Segment, SegmentKind};

    fn instance(gold_answer: &str, gold_docs: &[&str]) -> QaInstance {
        QaInstance {
            id: "q1".into(),
            question: "What is the capital of balko?".into(),
            gold_answer: gold_answer.into(),
            gold_doc_ids: gold_docs.iter().map(|s| s.to_string()).collect(),
            hop_count: 2,
            provenance: Provenance::Original,
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

    fn doc(id: &str) -> crate::index::Document {
        crate::index::Document {
            id: id.into(),
            title: "t".into(),
            body: format!("body of {id}"),
        }
    }

    fn trajectory(searched: &[&[&str]], answer: Option<&str>) -> Trajectory {
        let cfg = RolloutConfig::default();
        let mut traj = Trajectory::new("q1");
        for ids in searched {
            traj.push_policy_turn(vec![Segment::policy(SegmentKind::Search, "query")], None)
                .unwrap();
            let docs: Vec<_> = ids.iter().map(|id| doc(id)).collect();
            traj.append_information(&result_of(ids), &docs, &cfg).unwrap();
        }
        match answer {
            Some(a) => traj
                .push_policy_turn(vec![Segment::policy(SegmentKind::Answer, a)], None)
                .unwrap(),
            None => traj.terminate(Termination::BudgetExhausted),
        }
        traj
    }

    #[test]
    fn perfect_trajectory_scores_one() {
        let inst = instance("muntha", &["f1", "f2"]);
        let traj = trajectory(&[&["f1"], &["f2"]], Some("muntha"));
        let b = score_trajectory(&traj, &inst);
        assert_eq!(b.r_composite, 1.0);
        assert_eq!(b.r_em, 1.0);
        assert_eq!(b.r_recall, 1.0);
        assert_eq!(b.retrieved_gold.len(), 2);
    }

    #[test]
    fn wrong_answer_half_recall() {
        let inst = instance("muntha", &["f1", "f2"]);
        let traj = trajectory(&[&["f1", "x3"]], Some("wrong"));
        let b = score_trajectory(&traj, &inst);
        assert_eq!(b.r_em, 0.0);
        assert_eq!(b.r_recall, 0.5);
        assert_eq!(b.r_composite, 0.25);
    }

    #[test]
    fn correct_answer_partial_recall() {
        let inst = instance("muntha", &["f1", "f2", "f3"]);
        let traj = trajectory(&[&["f1"], &["f2", "x9"]], Some("muntha"));
        let b = score_trajectory(&traj, &inst);
        assert_eq!(b.r_em, 1.0);
        assert!((b.r_recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.r_composite - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_retrieval_does_not_double_count() {
        let inst = instance("muntha", &["f1", "f2"]);
        let traj = trajectory(&[&["f1"], &["f1"], &["f1"]], None);
        let b = score_trajectory(&traj, &inst);
        assert_eq!(b.r_recall, 0.5);
    }

    #[test]
    fn no_answer_scores_zero_em_with_recall_kept() {
        let inst = instance("muntha", &["f1"]);
        let traj = trajectory(&[&["f1"]], None);
        let b = score_trajectory(&traj, &inst);
        assert_eq!(b.r_em, 0.0);
        assert_eq!(b.r_recall, 1.0);
        assert_eq!(b.r_composite, 0.5);
    }

    #[test]
    fn violation_keeps_recall_unless_strict() {
        let inst = instance("muntha", &["f1"]);
        let mut traj = trajectory(&[&["f1"]], None);
        traj.terminated_by = Some(Termination::FormatViolation(
            crate::protocol::FormatViolationKind::TextOutsideTags,
        ));
        let lenient = score_trajectory(&traj, &inst);
        assert_eq!(lenient.r_recall, 1.0);
        assert_eq!(lenient.r_composite, 0.5);
        let strict = score_trajectory_with(&traj, &inst, RewardOptions { strict_format: true });
        assert_eq!(strict.r_composite, 0.0);
        assert_eq!(strict.r_recall, 0.0);
    }

    #[test]
    fn refusal_answer_scores_zero_em() {
        let inst = instance("muntha", &["f1"]);
        let traj = trajectory(&[&["f1"]], Some("Answer not found in documents"));
        let b = score_trajectory(&traj, &inst);
        assert_eq!(b.r_em, 0.0);
        assert_eq!(b.r_f1, 0.0);
    }

    #[test]
    fn scoring_is_pure() {
        let inst = instance("muntha", &["f1", "f2"]);
        let traj = trajectory(&[&["f1"]], Some("muntha"));
        assert_eq!(score_trajectory(&traj, &inst), score_trajectory(&traj, &inst));
    }

    #[test]
    fn composite_law_exhaustive() {
        // r_composite = (r_em + r_recall)/2 across the full small grid.
        for (gold_docs, retrieved, recall) in [
            (vec!["g1", "g2", "g3"], vec![], 0.0),
            (vec!["g1", "g2", "g3"], vec!["g1"], 1.0 / 3.0),
            (vec!["g1", "g2"], vec!["g1"], 0.5),
            (vec!["g1", "g2", "g3"], vec!["g1", "g2"], 2.0 / 3.0),
            (vec!["g1"], vec!["g1"], 1.0),
        ] {
            for em in [false, true] {
                let inst = instance("muntha", &gold_docs);
                let answer = if em { "muntha" } else { "wrong" };
                let searches: Vec<&[&str]> = vec![&retrieved[..]];
                let traj = trajectory(&searches, Some(answer));
                let b = score_trajectory(&traj, &inst);
                assert!((b.r_recall - recall).abs() < 1e-12);
                assert_eq!(b.r_composite, (b.r_em + b.r_recall) / 2.0);
                assert!(b.r_composite >= b.r_recall / 2.0);
                assert!(b.r_composite >= b.r_em / 2.0);
                assert_eq!(b.r_composite == 1.0, b.r_em == 1.0 && b.r_recall == 1.0);
            }
        }
    }
}
