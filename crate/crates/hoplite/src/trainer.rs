//! The training loop: sample a group of rollouts for one instance, score
//! them, standardize advantages within the group, and take one or more
//! ascent steps on the frozen batch.
//!
//! Every random stream derives from `(run seed, step)`, so a run resumed
//! from any checkpoint replays the remaining steps bit-identically. A
//! non-finite gradient aborts the step (parameters and checkpoints keep
//! their last stable values) and the run continues.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::QaInstance;
use crate::env::{derive_seed, rollout_group};
use crate::error::HopliteError;
use crate::grpo::{train_step_scaled, GroupBatch};
use crate::index::Bm25Index;
use crate::policy::TabularPolicy;
use crate::reward::score_trajectory_with;

// Stream tags for seed derivation; each consumer gets its own lane.
const STREAM_INSTANCE: u64 = 0x01;
const STREAM_ROLLOUT: u64 = 0x02;

/// Per-step telemetry row, mirrored into `metrics.csv`.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: u64,
    pub prompt_id: String,
    pub reward_mean: f64,
    pub em_mean: f64,
    pub recall_mean: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub mean_kl: f64,
    pub mean_entropy: f64,
    pub clip_fraction_high: f64,
    pub neg_floor_fraction: f64,
    pub aborted: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub reference: TabularPolicy,
    pub metrics: Vec<StepMetrics>,
    /// Steps aborted on a non-finite gradient.
    pub aborts: u64,
    /// Largest finite gradient norm observed.
    pub max_grad_norm: f64,
    /// Global minimum of the negative-advantage floor slack; nonnegative
    /// iff the per-token penalty bound held for the whole run.
    pub min_neg_slack: f64,
}

impl TrainOutcome {
    /// Mean composite reward over the last `n` steps.
    pub fn mean_reward_last(&self, n: usize) -> f64 {
        let tail = &self.metrics[self.metrics.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|m| m.reward_mean).sum::<f64>() / tail.len() as f64
    }
}

/// Everything `train` writes under the run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn rewards_csv(&self) -> PathBuf {
        self.root.join("rewards.csv")
    }
    pub fn checkpoint_at(&self, step: u64) -> PathBuf {
        self.root.join(format!("checkpoint_step{step:06}.txt"))
    }
    pub fn checkpoint_final(&self) -> PathBuf {
        self.root.join("checkpoint_final.txt")
    }
    pub fn log(&self) -> PathBuf {
        self.root.join("run.log")
    }
}

fn instance_pools<'a>(
    original: &'a [QaInstance],
    synthetic: Option<&'a [QaInstance]>,
    mix_ratio: f64,
) -> (&'a [QaInstance], Option<&'a [QaInstance]>, f64) {
    match synthetic {
        Some(synth) if !synth.is_empty() && mix_ratio > 0.0 => (original, Some(synth), mix_ratio),
        _ => (original, None, 0.0),
    }
}

/// Run (or resume) training, writing metrics, the per-sample reward
/// ledger, and periodic checkpoints under `out_dir`.
pub fn train(
    cfg: &RunConfig,
    index: &Bm25Index,
    original: &[QaInstance],
    synthetic: Option<&[QaInstance]>,
    out_dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome, HopliteError> {
    assert!(!original.is_empty(), "training needs at least one instance");
    std::fs::create_dir_all(out_dir)?;
    let run = RunDir {
        root: out_dir.to_path_buf(),
    };
    let config_hash = cfg.config_hash();

    let (mut policy, reference, start_step) = match resume {
        Some(ck) => (ck.policy, ck.reference, ck.step),
        None => {
            let p = TabularPolicy::uniform();
            (p.clone(), p, 0)
        }
    };

    let mut metrics_writer = open_metrics(&run, start_step, &config_hash, cfg.seed)?;
    let mut rewards_writer = open_rewards(&run, start_step, &config_hash, cfg.seed)?;
    let mut logger = RunLog::open(&run.log())?;

    let (orig_pool, synth_pool, mix_ratio) =
        instance_pools(original, synthetic, cfg.pipeline.mix_ratio);

    let mut outcome = TrainOutcome {
        policy: policy.clone(),
        reference: reference.clone(),
        metrics: Vec::new(),
        aborts: 0,
        max_grad_norm: 0.0,
        min_neg_slack: f64::INFINITY,
    };

    for step in start_step..cfg.steps {
        let mut pick_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, STREAM_INSTANCE), step));
        let instance = match synth_pool {
            Some(synth) if pick_rng.gen::<f64>() < mix_ratio => {
                &synth[pick_rng.gen_range(0..synth.len())]
            }
            _ => &orig_pool[pick_rng.gen_range(0..orig_pool.len())],
        };

        let rollout_seed = derive_seed(derive_seed(cfg.seed, STREAM_ROLLOUT), step);
        let trajectories = rollout_group(
            &policy,
            instance,
            index,
            &cfg.rollout,
            cfg.grpo.group_size,
            rollout_seed,
        )?;
        let breakdowns: Vec<_> = trajectories
            .iter()
            .map(|t| score_trajectory_with(t, instance, cfg.reward))
            .collect();
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.r_composite).collect();
        for (i, b) in breakdowns.iter().enumerate() {
            writeln!(
                rewards_writer,
                "{step},{},{i},{},{},{}",
                instance.id, b.r_em, b.r_recall, b.r_composite
            )?;
        }

        let em_mean = breakdowns.iter().map(|b| b.r_em).sum::<f64>() / rewards.len() as f64;
        let recall_mean =
            breakdowns.iter().map(|b| b.r_recall).sum::<f64>() / rewards.len() as f64;
        let reward_mean = rewards.iter().sum::<f64>() / rewards.len() as f64;

        let batch = GroupBatch::build(trajectories, rewards, &reference, &cfg.grpo)?;
        let lr_scale = warmup_scale(step, cfg.steps, cfg.grpo.warmup_fraction);

        let mut row = StepMetrics {
            step,
            prompt_id: instance.id.clone(),
            reward_mean,
            em_mean,
            recall_mean,
            objective: 0.0,
            grad_norm: 0.0,
            mean_kl: 0.0,
            mean_entropy: 0.0,
            clip_fraction_high: 0.0,
            neg_floor_fraction: 0.0,
            aborted: false,
        };
        for _epoch in 0..cfg.grpo.epochs_per_batch {
            match train_step_scaled(&mut policy, &batch, &cfg.grpo, lr_scale) {
                Ok(report) => {
                    row.objective = report.objective_value;
                    row.grad_norm = row.grad_norm.max(report.grad_norm);
                    row.mean_kl = report.mean_kl;
                    row.mean_entropy = report.mean_entropy;
                    row.clip_fraction_high = report.clip_fraction_high;
                    row.neg_floor_fraction = report.neg_floor_fraction;
                    outcome.max_grad_norm = outcome.max_grad_norm.max(report.grad_norm);
                    outcome.min_neg_slack =
                        outcome.min_neg_slack.min(report.neg_floor_min_slack);
                }
                Err(e) => {
                    row.aborted = true;
                    outcome.aborts += 1;
                    logger.line(&format!("step {step}: aborted update: {e}"))?;
                    break;
                }
            }
        }
        write_metrics_row(&mut metrics_writer, &row)?;
        outcome.metrics.push(row);

        let next = step + 1;
        if next % cfg.checkpoint_interval == 0 && next < cfg.steps {
            Checkpoint {
                config_hash: config_hash.clone(),
                seed: cfg.seed,
                step: next,
                policy: policy.clone(),
                reference: reference.clone(),
            }
            .save(&run.checkpoint_at(next))?;
        }
    }

    metrics_writer.flush()?;
    rewards_writer.flush()?;
    Checkpoint {
        config_hash,
        seed: cfg.seed,
        step: cfg.steps,
        policy: policy.clone(),
        reference: reference.clone(),
    }
    .save(&run.checkpoint_final())?;
    logger.line(&format!(
        "finished at step {} with {} aborted updates",
        cfg.steps, outcome.aborts
    ))?;

    outcome.policy = policy;
    outcome.reference = reference;
    Ok(outcome)
}

pub const METRICS_COLUMNS: &str = "step,prompt_id,reward_mean,em_mean,recall_mean,objective,grad_norm,mean_kl,mean_entropy,clip_fraction_high,neg_floor_fraction,aborted";

fn warmup_scale(step: u64, total: u64, fraction: f64) -> f64 {
    if fraction <= 0.0 || total == 0 {
        return 1.0;
    }
    let ramp = (fraction * total as f64).max(1.0);
    (((step + 1) as f64) / ramp).min(1.0)
}

fn open_metrics(
    run: &RunDir,
    start_step: u64,
    config_hash: &str,
    seed: u64,
) -> Result<BufWriter<File>, HopliteError> {
    open_csv(
        &run.metrics_csv(),
        start_step,
        &format!("# config_hash={config_hash} seed={seed}\n{METRICS_COLUMNS}\n"),
    )
}

fn open_rewards(
    run: &RunDir,
    start_step: u64,
    config_hash: &str,
    seed: u64,
) -> Result<BufWriter<File>, HopliteError> {
    open_csv(
        &run.rewards_csv(),
        start_step,
        &format!(
            "# config_hash={config_hash} seed={seed}\nstep,prompt_id,sample_index,r_em,r_recall,r_composite\n"
        ),
    )
}

/// Create the CSV with its header, or — on resume — keep rows below the
/// resume step and append after them, so a resumed run reproduces the
/// fresh run's file exactly.
fn open_csv(path: &Path, start_step: u64, header: &str) -> Result<BufWriter<File>, HopliteError> {
    if start_step > 0 && path.exists() {
        let existing = std::fs::read_to_string(path)?;
        let kept: String = existing
            .lines()
            .filter(|line| {
                if line.starts_with('#') || line.starts_with("step,") {
                    return true;
                }
                line.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .map(|s| s < start_step)
                    .unwrap_or(false)
            })
            .map(|l| format!("{l}\n"))
            .collect();
        std::fs::write(path, kept)?;
        let file = OpenOptions::new().append(true).open(path)?;
        return Ok(BufWriter::new(file));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(header.as_bytes())?;
    Ok(w)
}

fn write_metrics_row(w: &mut BufWriter<File>, m: &StepMetrics) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        m.step,
        m.prompt_id,
        m.reward_mean,
        m.em_mean,
        m.recall_mean,
        m.objective,
        m.grad_norm,
        m.mean_kl,
        m.mean_entropy,
        m.clip_fraction_high,
        m.neg_floor_fraction,
        m.aborted
    )
}

/// Timestamped sidecar log; timestamps live here and only here, keeping
/// every other artifact byte-reproducible.
struct RunLog {
    w: BufWriter<File>,
}

impl RunLog {
    fn open(path: &Path) -> Result<Self, HopliteError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            w: BufWriter::new(file),
        })
    }

    fn line(&mut self, msg: &str) -> Result<(), HopliteError> {
        let unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(self.w, "[{unix}] {msg}")?;
        self.w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainworld::{self, ChainWorldSpec};
    use crate::index::Bm25Params;

    fn quick_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.steps = 6;
        cfg.checkpoint_interval = 2;
        cfg.chainworld = ChainWorldSpec {
            entity_count: 24,
            distractor_count: 10,
            seed: 5,
            ..Default::default()
        };
        cfg
    }

    fn world(cfg: &RunConfig) -> (Bm25Index, Vec<QaInstance>) {
        let (docs, instances) = chainworld::generate(&cfg.chainworld).unwrap();
        (Bm25Index::build(docs, Bm25Params::default()).unwrap(), instances)
    }

    #[test]
    fn zero_steps_is_a_noop_with_artifacts() {
        let cfg = RunConfig {
            steps: 0,
            ..quick_cfg()
        };
        let (index, instances) = world(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(&cfg, &index, &instances, None, dir.path(), None).unwrap();
        assert!(outcome.metrics.is_empty());
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("checkpoint_final.txt").exists());
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with("# config_hash="));
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let cfg = quick_cfg();
        let (index, instances) = world(&cfg);
        let a_dir = tempfile::tempdir().unwrap();
        let b_dir = tempfile::tempdir().unwrap();
        let a = train(&cfg, &index, &instances, None, a_dir.path(), None).unwrap();
        let b = train(&cfg, &index, &instances, None, b_dir.path(), None).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(
            std::fs::read(a_dir.path().join("metrics.csv")).unwrap(),
            std::fs::read(b_dir.path().join("metrics.csv")).unwrap()
        );
        assert_eq!(
            std::fs::read(a_dir.path().join("rewards.csv")).unwrap(),
            std::fs::read(b_dir.path().join("rewards.csv")).unwrap()
        );
        assert_eq!(
            std::fs::read(a_dir.path().join("checkpoint_final.txt")).unwrap(),
            std::fs::read(b_dir.path().join("checkpoint_final.txt")).unwrap()
        );
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let cfg = quick_cfg();
        let (index, instances) = world(&cfg);

        let full_dir = tempfile::tempdir().unwrap();
        let full = train(&cfg, &index, &instances, None, full_dir.path(), None).unwrap();

        // Simulate a crash after the step-4 checkpoint: the run directory
        // holds the periodic checkpoint and a metrics file that may even
        // contain rows past the checkpointed step.
        let part_dir = tempfile::tempdir().unwrap();
        for file in ["metrics.csv", "rewards.csv", "checkpoint_step000004.txt"] {
            std::fs::copy(full_dir.path().join(file), part_dir.path().join(file)).unwrap();
        }
        let ck = Checkpoint::load(&part_dir.path().join("checkpoint_step000004.txt")).unwrap();
        assert_eq!(ck.step, 4);
        let resumed = train(&cfg, &index, &instances, None, part_dir.path(), Some(ck)).unwrap();
        assert_eq!(resumed.policy, full.policy);
        assert_eq!(
            std::fs::read(full_dir.path().join("metrics.csv")).unwrap(),
            std::fs::read(part_dir.path().join("metrics.csv")).unwrap()
        );
        assert_eq!(
            std::fs::read(full_dir.path().join("rewards.csv")).unwrap(),
            std::fs::read(part_dir.path().join("rewards.csv")).unwrap()
        );
        assert_eq!(
            std::fs::read(full_dir.path().join("checkpoint_final.txt")).unwrap(),
            std::fs::read(part_dir.path().join("checkpoint_final.txt")).unwrap()
        );
    }

    #[test]
    fn warmup_ramps_linearly() {
        assert_eq!(warmup_scale(0, 100, 0.0), 1.0);
        let s0 = warmup_scale(0, 100, 0.285);
        let s14 = warmup_scale(14, 100, 0.285);
        let s28 = warmup_scale(28, 100, 0.285);
        assert!(s0 < s14 && s14 < s28);
        assert!((s28 - (29.0 / 28.5)).abs() < 0.05 || s28 == 1.0);
        assert_eq!(warmup_scale(50, 100, 0.285), 1.0);
    }
}
