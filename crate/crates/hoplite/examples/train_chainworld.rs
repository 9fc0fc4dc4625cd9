//! End-to-end training on the default chain world: generate the corpus,
//! build the index, train the tabular policy with group-relative updates,
//! and print the reward curve.
//!
//! Run with: cargo run --release --example train_chainworld

use hoplite::chainworld;
use hoplite::config::RunConfig;
use hoplite::index::{Bm25Index, Bm25Params};
use hoplite::trainer::train;

fn main() -> Result<(), hoplite::HopliteError> {
    let mut cfg = RunConfig::default();
    cfg.steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    cfg.grpo.learning_rate = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.grpo.learning_rate);
    cfg.grpo.epochs_per_batch = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.grpo.epochs_per_batch);
    if let Some(neg) = std::env::args().nth(4).and_then(|s| s.parse::<f64>().ok()) {
        cfg.grpo.neg_clip = neg;
    }
    if let Some(beta) = std::env::args().nth(5).and_then(|s| s.parse::<f64>().ok()) {
        cfg.grpo.kl_coeff = beta;
    }

    let (docs, instances) = chainworld::generate(&cfg.chainworld)?;
    println!(
        "chain world: {} documents, {} questions (seed {})",
        docs.len(),
        instances.len(),
        cfg.chainworld.seed
    );
    let index = Bm25Index::build(docs, Bm25Params::default())?;

    let out = tempfile_dir();
    let start = std::time::Instant::now();
    let outcome = train(&cfg, &index, &instances, None, &out, None)?;
    println!(
        "trained {} steps in {:.1?} (lr {}, epochs/batch {})",
        cfg.steps,
        start.elapsed(),
        cfg.grpo.learning_rate,
        cfg.grpo.epochs_per_batch
    );

    for window in [1usize, 10, 50] {
        if cfg.steps as usize >= window {
            println!(
                "mean composite reward, last {window:>3} steps: {:.4}",
                outcome.mean_reward_last(window)
            );
        }
    }
    let head = outcome
        .metrics
        .iter()
        .take(25)
        .map(|m| m.reward_mean)
        .sum::<f64>()
        / 25.0_f64.min(outcome.metrics.len() as f64);
    println!("mean composite reward, first 25 steps: {head:.4}");
    println!(
        "aborted updates: {}, max grad norm: {:.3e}, min floor slack: {:.3e}",
        outcome.aborts, outcome.max_grad_norm, outcome.min_neg_slack
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hoplite-train-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp run dir");
    dir
}
