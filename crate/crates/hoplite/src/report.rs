//! Aggregation over a run directory's metrics CSV: tail-window means,
//! maxima, and abort counts, printed as a table and exportable as tidy
//! CSV for plotting tools.

use std::path::Path;

use crate::error::HopliteError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub steps: usize,
    pub aborted_steps: usize,
    pub final_reward_mean: f64,
    /// Mean composite reward over the final `tail` steps.
    pub tail_reward_mean: f64,
    pub tail_em_mean: f64,
    pub tail_recall_mean: f64,
    pub max_grad_norm: f64,
    pub mean_kl_last: f64,
    pub mean_entropy_last: f64,
    pub tail: usize,
}

/// Parse `metrics.csv` produced by training and aggregate it.
pub fn summarize_run(metrics_csv: &Path, tail: usize) -> Result<RunReport, HopliteError> {
    let text = std::fs::read_to_string(metrics_csv)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("step,") || line.trim().is_empty() {
            continue;
        }
        rows.push(line.split(',').map(str::to_owned).collect());
    }
    let col = |row: &[String], i: usize| -> f64 { row.get(i).and_then(|v| v.parse().ok()).unwrap_or(0.0) };
    // Columns: step,prompt_id,reward_mean,em_mean,recall_mean,objective,
    //          grad_norm,mean_kl,mean_entropy,clip_high,neg_floor,aborted
    let steps = rows.len();
    let aborted_steps = rows.iter().filter(|r| r.last().map(String::as_str) == Some("true")).count();
    let tail_rows = &rows[steps.saturating_sub(tail)..];
    let mean_of = |rows: &[Vec<String>], i: usize| -> f64 {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| col(r, i)).sum::<f64>() / rows.len() as f64
        }
    };
    Ok(RunReport {
        steps,
        aborted_steps,
        final_reward_mean: rows.last().map(|r| col(r, 2)).unwrap_or(0.0),
        tail_reward_mean: mean_of(tail_rows, 2),
        tail_em_mean: mean_of(tail_rows, 3),
        tail_recall_mean: mean_of(tail_rows, 4),
        max_grad_norm: rows.iter().map(|r| col(r, 6)).fold(0.0, f64::max),
        mean_kl_last: tail_rows.last().map(|r| col(r, 7)).unwrap_or(0.0),
        mean_entropy_last: tail_rows.last().map(|r| col(r, 8)).unwrap_or(0.0),
        tail: tail_rows.len(),
    })
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nsteps,{}\naborted_steps,{}\nfinal_reward_mean,{}\ntail_reward_mean,{}\ntail_em_mean,{}\ntail_recall_mean,{}\nmax_grad_norm,{}\nmean_kl_last,{}\nmean_entropy_last,{}\ntail_window,{}\n",
            self.steps,
            self.aborted_steps,
            self.final_reward_mean,
            self.tail_reward_mean,
            self.tail_em_mean,
            self.tail_recall_mean,
            self.max_grad_norm,
            self.mean_kl_last,
            self.mean_entropy_last,
            self.tail
        )
    }

    pub fn render_table(&self) -> String {
        format!(
            "steps run            {:>12}\naborted updates      {:>12}\nreward mean (last {:>3}) {:>11.4}\nEM mean (tail)       {:>12.4}\nrecall mean (tail)   {:>12.4}\nmax gradient norm    {:>12.4e}\nKL (last step)       {:>12.6}\nentropy (last step)  {:>12.4}\n",
            self.steps,
            self.aborted_steps,
            self.tail,
            self.tail_reward_mean,
            self.tail_em_mean,
            self.tail_recall_mean,
            self.max_grad_norm,
            self.mean_kl_last,
            self.mean_entropy_last,
        )
    }
}
