//! Group-relative policy optimization with stabilization.
//!
//! The per-token surrogate is the clipped importance-weighted advantage
//! with three modifications that keep long-horizon training stable:
//!
//! * **Asymmetric clipping** — the upper clip bound `1 + clip_high` sits
//!   above the lower `1 - clip_low`, preserving gradient on low-probability
//!   exploration tokens.
//! * **Negative-advantage floor** — for `adv < 0` the objective is bounded
//!   below by `neg_clip * adv`, capping the penalty magnitude a single
//!   token can receive. Without it the surrogate is unbounded below in the
//!   ratio and gradients explode exactly when the policy drifts.
//! * **Entropy bonus** — `entropy_coeff` times the mean action entropy,
//!   discouraging premature deterministic collapse.
//!
//! Advantages are per-trajectory rewards standardized within the group
//! (population variance, floored to zero for degenerate groups) and
//! broadcast to the trajectory's unmasked tokens. Environment-injected
//! tokens are masked: they carry no decision, appear in no sum, and
//! cannot influence the objective or gradient.
//!
//! Gradients are exact: the policy differentiates its own log-probabilities
//! and entropies, and this module chains them through the surrogate, the
//! per-token KL estimator `exp(d) - d - 1`, and the length normalization.

use serde::{Deserialize, Serialize};

use crate::error::GrpoError;
use crate::policy::DifferentiablePolicy;
use crate::protocol::{Origin, TokenRecord, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Trajectories sampled per prompt.
    pub group_size: usize,
    /// Lower clip width (ratio floor `1 - clip_low`).
    pub clip_low: f64,
    /// Upper clip width (ratio ceiling `1 + clip_high`).
    pub clip_high: f64,
    /// Negative-advantage floor multiplier, > 1; `inf` disables the floor.
    pub neg_clip: f64,
    /// KL regularization strength toward the reference policy.
    pub kl_coeff: f64,
    /// Entropy bonus strength.
    pub entropy_coeff: f64,
    pub learning_rate: f64,
    /// Groups whose reward standard deviation falls below this contribute
    /// zero advantages.
    pub std_floor: f64,
    /// Gradient steps taken on each sampled batch before fresh rollouts.
    pub epochs_per_batch: usize,
    /// Optional gradient-norm clip.
    pub max_grad_norm: Option<f64>,
    /// Linear learning-rate warm-up over this fraction of total steps;
    /// 0 disables.
    pub warmup_fraction: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            clip_low: 0.2,
            clip_high: 0.32,
            neg_clip: 3.0,
            kl_coeff: 0.001,
            entropy_coeff: 0.005,
            learning_rate: 0.05,
            std_floor: 1e-6,
            epochs_per_batch: 2,
            max_grad_norm: None,
            warmup_fraction: 0.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let mut problems = Vec::new();
        if self.group_size < 2 {
            problems.push("group_size must be >= 2".to_string());
        }
        if !(self.clip_low > 0.0 && self.clip_low < 1.0) {
            problems.push(format!("clip_low {} must be in (0, 1)", self.clip_low));
        }
        if self.clip_high < self.clip_low {
            problems.push(format!(
                "clip_high {} must be >= clip_low {}",
                self.clip_high, self.clip_low
            ));
        }
        if !(self.neg_clip > 1.0) {
            problems.push(format!("neg_clip {} must be > 1", self.neg_clip));
        }
        if self.kl_coeff < 0.0 {
            problems.push("kl_coeff must be >= 0".to_string());
        }
        if self.entropy_coeff < 0.0 {
            problems.push("entropy_coeff must be >= 0".to_string());
        }
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be > 0".to_string());
        }
        if !(self.std_floor > 0.0) {
            problems.push("std_floor must be > 0".to_string());
        }
        if self.epochs_per_batch < 1 {
            problems.push("epochs_per_batch must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            problems.push("warmup_fraction must be in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GrpoError::BadConfig(problems.join("; ")))
        }
    }
}

/// Standardize rewards within a group: `(r - mean) / std` with population
/// variance. A group whose std falls below `std_floor` yields all-zero
/// advantages — it carries no comparative signal.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Per-token KL estimator `exp(d) - d - 1` with `d = logp_ref - logp_theta`.
/// Pointwise nonnegative, zero iff the log-probabilities agree.
pub fn kl_token(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_theta;
    d.exp() - d - 1.0
}

#[derive(Debug, Clone, Copy)]
struct TokenTerm {
    value: f64,
    /// d(value)/d(ratio) on the active branch.
    dvalue_dratio: f64,
    clipped_high: bool,
    neg_floor: bool,
}

fn token_term(ratio: f64, adv: f64, cfg: &GrpoConfig) -> Result<TokenTerm, GrpoError> {
    if !(ratio > 0.0) {
        return Err(GrpoError::NonPositiveRatio(ratio));
    }
    let lo = 1.0 - cfg.clip_low;
    let hi = 1.0 + cfg.clip_high;
    let clipped_ratio = ratio.clamp(lo, hi);
    let unclipped = ratio * adv;
    let clipped = clipped_ratio * adv;

    let (mut value, mut slope) = if unclipped <= clipped {
        (unclipped, adv)
    } else {
        // Active branch is the clipped term; its slope is zero outside the
        // clip window and `adv` inside (where both branches coincide).
        let inside = ratio > lo && ratio < hi;
        (clipped, if inside { adv } else { 0.0 })
    };
    let clipped_high = adv > 0.0 && ratio >= hi && value == clipped;

    let mut neg_floor = false;
    if adv < 0.0 {
        let floor = cfg.neg_clip * adv;
        if value < floor {
            value = floor;
            slope = 0.0;
            neg_floor = true;
        }
    }
    Ok(TokenTerm {
        value,
        dvalue_dratio: slope,
        clipped_high,
        neg_floor,
    })
}

/// The stabilized per-token surrogate:
/// `min(ratio*adv, clip(ratio)*adv)`, floored at `neg_clip*adv` when the
/// advantage is negative.
pub fn token_objective(ratio: f64, adv: f64, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    token_term(ratio, adv, cfg).map(|t| t.value)
}

/// Per-token log-probabilities recorded when the batch was frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub logp_old: f64,
    pub logp_ref: f64,
}

/// A group of trajectories frozen for optimization: rewards, standardized
/// advantages, and per-unmasked-token log-probabilities under the sampling
/// policy and the reference policy.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Aligned with the unmasked tokens of each trajectory, in order.
    pub token_stats: Vec<Vec<TokenStats>>,
}

fn unmasked<'a>(traj: &'a Trajectory) -> impl Iterator<Item = &'a TokenRecord> {
    traj.tokens.iter().filter(|t| t.origin == Origin::Policy)
}

impl GroupBatch {
    /// Freeze a batch. `logp_old` comes from the emission records (the
    /// sampling policy is the old policy); `logp_ref` is evaluated now
    /// under `reference`.
    pub fn build<P: DifferentiablePolicy>(
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        reference: &P,
        cfg: &GrpoConfig,
    ) -> Result<Self, GrpoError> {
        if trajectories.len() != rewards.len() {
            return Err(GrpoError::LengthMismatch {
                got: trajectories.len(),
                expected: rewards.len(),
            });
        }
        let advantages = group_advantages(&rewards, cfg.std_floor)?;
        let token_stats = trajectories
            .iter()
            .map(|traj| {
                unmasked(traj)
                    .map(|tok| TokenStats {
                        logp_old: tok.logp_emit,
                        logp_ref: tok
                            .decision
                            .map(|d| reference.decision_logp(d))
                            .unwrap_or(0.0),
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            trajectories,
            rewards,
            advantages,
            token_stats,
        })
    }
}

/// Objective value with its exact gradient and telemetry.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub mean_kl: f64,
    pub mean_entropy: f64,
    pub clip_fraction_high: f64,
    pub neg_floor_fraction: f64,
    /// Min over negative-advantage tokens of `value - neg_clip*adv`;
    /// nonnegative iff the floor held everywhere. Infinite when no such
    /// token exists.
    pub neg_floor_min_slack: f64,
    pub excluded_trajectories: usize,
}

/// Evaluate the full objective on a frozen batch under the current policy
/// parameters, differentiating exactly through the surrogate, KL, and
/// entropy terms. Trajectories with zero unmasked tokens are excluded.
pub fn batch_objective<P: DifferentiablePolicy>(
    batch: &GroupBatch,
    policy: &P,
    cfg: &GrpoConfig,
) -> Result<ObjectiveReport, GrpoError> {
    let mut gradient = vec![0.0; policy.param_len()];
    let included: Vec<usize> = (0..batch.trajectories.len())
        .filter(|&i| {
            let has_tokens = !batch.token_stats[i].is_empty();
            if !has_tokens {
                log::warn!(
                    "trajectory {} has no unmasked tokens; excluded from the objective",
                    batch.trajectories[i].prompt_id
                );
            }
            has_tokens
        })
        .collect();
    let excluded = batch.trajectories.len() - included.len();
    if included.is_empty() {
        return Ok(ObjectiveReport {
            value: 0.0,
            gradient,
            mean_kl: 0.0,
            mean_entropy: 0.0,
            clip_fraction_high: 0.0,
            neg_floor_fraction: 0.0,
            neg_floor_min_slack: f64::INFINITY,
            excluded_trajectories: excluded,
        });
    }

    let n = included.len() as f64;
    let mut value = 0.0;
    let mut kl_acc = 0.0;
    let mut entropy_acc = 0.0;
    let mut token_count = 0usize;
    let mut clipped_high = 0usize;
    let mut neg_floor = 0usize;
    let mut min_slack = f64::INFINITY;

    for &i in &included {
        let adv = batch.advantages[i];
        let stats = &batch.token_stats[i];
        let tokens: Vec<&TokenRecord> = unmasked(&batch.trajectories[i]).collect();
        debug_assert_eq!(tokens.len(), stats.len());
        let w = 1.0 / (n * tokens.len() as f64);

        for (tok, st) in tokens.iter().zip(stats) {
            token_count += 1;
            let logp_theta = match tok.decision {
                Some(d) => policy.decision_logp(d),
                None => 0.0,
            };
            let ratio = (logp_theta - st.logp_old).exp();
            let term = token_term(ratio, adv, cfg)?;
            let kl = kl_token(logp_theta, st.logp_ref);
            let entropy = match tok.decision {
                Some(d) => policy.decision_entropy(d),
                None => 0.0,
            };
            value += w * (term.value - cfg.kl_coeff * kl + cfg.entropy_coeff * entropy);
            kl_acc += w * kl;
            entropy_acc += w * entropy;
            clipped_high += term.clipped_high as usize;
            neg_floor += term.neg_floor as usize;
            if adv < 0.0 {
                min_slack = min_slack.min(term.value - cfg.neg_clip * adv);
            }

            if let Some(d) = tok.decision {
                // d(value)/d(logp) = d(value)/d(ratio) * ratio;
                // d(-beta*kl)/d(logp) = -beta * (1 - exp(logp_ref - logp)).
                let dkl_dlogp = 1.0 - (st.logp_ref - logp_theta).exp();
                let w_logp = w * (term.dvalue_dratio * ratio - cfg.kl_coeff * dkl_dlogp);
                let w_entropy = w * cfg.entropy_coeff;
                policy.accumulate_decision_grad(d, w_logp, w_entropy, &mut gradient);
            }
        }
    }

    Ok(ObjectiveReport {
        value,
        gradient,
        mean_kl: kl_acc,
        mean_entropy: entropy_acc,
        clip_fraction_high: clipped_high as f64 / token_count as f64,
        neg_floor_fraction: neg_floor as f64 / token_count as f64,
        neg_floor_min_slack: min_slack,
        excluded_trajectories: excluded,
    })
}

/// Training telemetry for one gradient step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateReport {
    pub objective_value: f64,
    pub grad_norm: f64,
    pub mean_kl: f64,
    pub mean_entropy: f64,
    pub clip_fraction_high: f64,
    pub neg_floor_fraction: f64,
    pub neg_floor_min_slack: f64,
    pub excluded_trajectories: usize,
}

/// One ascent step. On a non-finite gradient the step is aborted with a
/// diagnostic and the parameters stay untouched.
pub fn train_step<P: DifferentiablePolicy>(
    policy: &mut P,
    batch: &GroupBatch,
    cfg: &GrpoConfig,
) -> Result<UpdateReport, GrpoError> {
    train_step_scaled(policy, batch, cfg, 1.0)
}

/// [`train_step`] with a learning-rate scale (used by warm-up schedules).
pub fn train_step_scaled<P: DifferentiablePolicy>(
    policy: &mut P,
    batch: &GroupBatch,
    cfg: &GrpoConfig,
    lr_scale: f64,
) -> Result<UpdateReport, GrpoError> {
    let report = batch_objective(batch, policy, cfg)?;
    if let Some(bad) = report.gradient.iter().position(|g| !g.is_finite()) {
        return Err(GrpoError::NonFiniteGradient {
            param_index: bad,
            value: report.gradient[bad],
        });
    }
    let grad_norm = report.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let clip_scale = match cfg.max_grad_norm {
        Some(max) if grad_norm > max && grad_norm > 0.0 => max / grad_norm,
        _ => 1.0,
    };
    let lr = cfg.learning_rate * lr_scale * clip_scale;
    let mut params = policy.params().to_vec();
    for (p, g) in params.iter_mut().zip(&report.gradient) {
        *p += lr * g;
    }
    policy.set_params(&params);
    Ok(UpdateReport {
        objective_value: report.value,
        grad_norm,
        mean_kl: report.mean_kl,
        mean_entropy: report.mean_entropy,
        clip_fraction_high: report.clip_fraction_high,
        neg_floor_fraction: report.neg_floor_fraction,
        neg_floor_min_slack: report.neg_floor_min_slack,
        excluded_trajectories: report.excluded_trajectories,
    })
}
