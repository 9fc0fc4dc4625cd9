//! hoplite: a desk-scale training stack for multi-hop search agents.
//!
//! The crate wires four pieces into one trainable loop:
//!
//! 1. **Retrieval** — an Okapi BM25 inverted index over a JSONL corpus
//!    ([`index`]), serving both rollouts (top-5 per turn) and candidate
//!    verification (top-40).
//! 2. **Rollouts** — a tagged `<think>/<search>/<information>/<answer>`
//!    turn protocol ([`protocol`]) driven by a policy against the index
//!    ([`env`]), with environment-injected tokens masked out of the loss.
//! 3. **Optimization** — group-relative policy optimization with asymmetric
//!    clipping, a negative-advantage floor, KL regularization, and an
//!    entropy bonus ([`grpo`]), rewarded by answer exact-match plus
//!    cumulative gold-document recall ([`reward`]).
//! 4. **Data curation** — a three-stage synthetic question pipeline
//!    ([`pipeline`]): mine hard anchors by a pessimistic solvability score,
//!    generate dissimilar questions with an external generator model, and
//!    keep only candidates whose oracle and retrieval answers agree.
//!
//! Everything runs on [`chainworld`], a deterministic synthetic corpus of
//! relation-chain facts, so the full stack is verifiable end to end with
//! an exactly-differentiable tabular policy ([`policy::TabularPolicy`]) —
//! no GPU, no external services. A scripted generator stands in for the
//! live model during tests; a real HTTP endpoint plugs into the same trait.
//!
//! Start with the runnable examples (`cargo run --example rollout_demo`)
//! or the `hoplite` binary (`hoplite chainworld`, `hoplite index`,
//! `hoplite train`, `hoplite eval`, `hoplite pipeline`, `hoplite report`).

pub mod chainworld;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod prompts;
pub mod protocol;
pub mod report;
pub mod reward;
pub mod trainer;

pub use config::RunConfig;
pub use error::HopliteError;
