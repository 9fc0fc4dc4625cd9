//! Thin command-line front end; all logic lives in the library
//! ([`hoplite::commands`]).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hoplite::commands;
use hoplite::config::RunConfig;
use hoplite::error::HopliteError;

#[derive(Parser)]
#[command(
    name = "hoplite",
    version,
    about = "Train and probe multi-hop search agents on a deterministic synthetic corpus"
)]
struct Cli {
    /// TOML run configuration. When absent, built-in defaults apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Accept artifacts whose recorded config hash does not match.
    #[arg(long, global = true)]
    force: bool,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic relation-chain corpus and question set.
    Chainworld {
        /// Output directory for corpus.jsonl and instances.jsonl.
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Build the BM25 index file from a JSONL corpus.
    Index {
        /// Corpus path; defaults to the configured one.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Index output path; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) training.
    Train {
        #[arg(long, default_value = "runs/latest")]
        out_dir: PathBuf,
        /// Resume from this checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Pass@k evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset JSONL; defaults to the configured instances.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Samples per instance; defaults to the configured k.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "eval")]
        out_dir: PathBuf,
        /// Also dump every sampled trajectory as JSONL.
        #[arg(long)]
        dump_trajectories: Option<PathBuf>,
    },
    /// Synthetic data pipeline stages.
    Pipeline {
        #[command(subcommand)]
        stage: PipelineStage,
    },
    /// Aggregate a run directory's metrics.
    Report {
        #[arg(long, default_value = "runs/latest")]
        run_dir: PathBuf,
        /// Tail window for means.
        #[arg(long, default_value_t = 50)]
        tail: usize,
    },
}

#[derive(Subcommand)]
enum PipelineStage {
    /// Score solvability and select the hardest anchors.
    Mine {
        /// Policy checkpoint to roll out with (uniform policy if absent).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "pipeline/anchors.jsonl")]
        out: PathBuf,
        /// Rollouts per instance.
        #[arg(long)]
        k: Option<usize>,
        /// Anchors to keep.
        #[arg(long)]
        select_n: Option<usize>,
    },
    /// Generate candidate questions from mined anchors.
    Synthesize {
        #[arg(long, default_value = "pipeline/anchors.jsonl")]
        anchors: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "pipeline/candidates.jsonl")]
        out: PathBuf,
        /// Candidates per anchor.
        #[arg(long)]
        per_anchor: Option<usize>,
    },
    /// Verify candidates by oracle/retrieval answer agreement.
    Verify {
        #[arg(long, default_value = "pipeline/candidates.jsonl")]
        candidates: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "pipeline/verified.jsonl")]
        out: PathBuf,
        /// Acceptance threshold override (for sweeps).
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Compose the original/synthetic training mix manifest.
    Mix {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "pipeline/verified.jsonl")]
        verified: PathBuf,
        /// Synthetic draw probability override.
        #[arg(long)]
        ratio: Option<f64>,
        /// Draws in the manifest (defaults to the dataset size).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value = "pipeline/manifest.jsonl")]
        out: PathBuf,
        #[arg(long, default_value = "pipeline/synthetic_instances.jsonl")]
        out_instances: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, HopliteError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            // Paths in the file are relative to the file.
            cfg.paths.corpus = commands::resolve_path(path, &cfg.paths.corpus);
            cfg.paths.index = commands::resolve_path(path, &cfg.paths.index);
            cfg.paths.instances = commands::resolve_path(path, &cfg.paths.instances);
            cfg.paths.synthetic_instances = cfg
                .paths
                .synthetic_instances
                .as_ref()
                .map(|p| commands::resolve_path(path, p));
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HopliteError> {
    let mut cfg = load_config(&cli)?;
    let force = cli.force;
    match cli.command {
        Command::Chainworld { out_dir } => {
            let (docs, instances) = commands::cmd_chainworld(&cfg, &out_dir)?;
            println!(
                "wrote {docs} documents and {instances} instances to {}",
                out_dir.display()
            );
        }
        Command::Index { corpus, out } => {
            let corpus = corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
            let out = out.unwrap_or_else(|| cfg.paths.index.clone());
            let docs = commands::cmd_index(&cfg, &corpus, &out, force)?;
            println!("indexed {docs} documents into {}", out.display());
        }
        Command::Train { out_dir, resume } => {
            let outcome = commands::cmd_train(&cfg, &out_dir, resume.as_deref(), force)?;
            if outcome.metrics.is_empty() {
                println!("no steps configured; config echo:");
                println!("{}", toml::to_string(&cfg).expect("config serializes"));
            } else {
                println!(
                    "trained {} steps ({} aborted), reward mean last 50 = {:.4}",
                    outcome.metrics.len(),
                    outcome.aborts,
                    outcome.mean_reward_last(50)
                );
            }
            println!("artifacts in {}", out_dir.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            k,
            out_dir,
            dump_trajectories,
        } => {
            let dataset = dataset.unwrap_or_else(|| cfg.paths.instances.clone());
            let k = k.unwrap_or(cfg.eval.k);
            let report = commands::cmd_eval(
                &cfg,
                &checkpoint,
                &dataset,
                k,
                &out_dir,
                dump_trajectories.as_deref(),
                force,
            )?;
            for slice in &report.slices {
                println!(
                    "{:<10} n={:<4} EM best/avg {:.3}/{:.3}  recall best/avg {:.3}/{:.3}",
                    slice.key, slice.n, slice.em_best, slice.em_avg, slice.recall_best, slice.recall_avg
                );
            }
            println!("report in {}", out_dir.display());
        }
        Command::Pipeline { stage } => match stage {
            PipelineStage::Mine {
                checkpoint,
                dataset,
                out,
                k,
                select_n,
            } => {
                if let Some(k) = k {
                    cfg.pipeline.solvability_k = k;
                }
                if let Some(n) = select_n {
                    cfg.pipeline.select_n = n;
                }
                cfg.validate()?;
                let dataset = dataset.unwrap_or_else(|| cfg.paths.instances.clone());
                if let Some(parent) = out.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                let records =
                    commands::cmd_pipeline_mine(&cfg, checkpoint.as_deref(), &dataset, &out, force)?;
                println!("mined {} anchors into {}", records.len(), out.display());
            }
            PipelineStage::Synthesize {
                anchors,
                dataset,
                out,
                per_anchor,
            } => {
                if let Some(n) = per_anchor {
                    cfg.pipeline.per_anchor = n;
                }
                cfg.validate()?;
                let dataset = dataset.unwrap_or_else(|| cfg.paths.instances.clone());
                let candidates =
                    commands::cmd_pipeline_synthesize(&cfg, &anchors, &dataset, &out, force)?;
                let pending = candidates
                    .iter()
                    .filter(|c| c.verdict == hoplite::pipeline::Verdict::Pending)
                    .count();
                println!(
                    "generated {} candidates ({pending} pending) into {}",
                    candidates.len(),
                    out.display()
                );
            }
            PipelineStage::Verify {
                candidates,
                dataset,
                out,
                tau,
            } => {
                if let Some(tau) = tau {
                    cfg.pipeline.tau = tau;
                }
                cfg.validate()?;
                let dataset = dataset.unwrap_or_else(|| cfg.paths.instances.clone());
                let verified =
                    commands::cmd_pipeline_verify(&cfg, &candidates, &dataset, &out, force)?;
                let accepted = verified
                    .iter()
                    .filter(|c| c.verdict == hoplite::pipeline::Verdict::Accepted)
                    .count();
                println!(
                    "verified {} candidates, accepted {accepted}, into {}",
                    verified.len(),
                    out.display()
                );
            }
            PipelineStage::Mix {
                dataset,
                verified,
                ratio,
                count,
                out,
                out_instances,
            } => {
                if let Some(r) = ratio {
                    cfg.pipeline.mix_ratio = r;
                }
                cfg.validate()?;
                let dataset = dataset.unwrap_or_else(|| cfg.paths.instances.clone());
                let draws = match count {
                    Some(n) => n,
                    None => {
                        let (instances, _) = hoplite::dataset::read_instances(&dataset)?;
                        instances.len()
                    }
                };
                let mix = commands::cmd_pipeline_mix(
                    &cfg,
                    &dataset,
                    &verified,
                    draws,
                    &out,
                    &out_instances,
                    force,
                )?;
                println!(
                    "manifest of {} draws over {} synthetic instances into {}",
                    mix.manifest.len(),
                    mix.accepted.len(),
                    out.display()
                );
            }
        },
        Command::Report { run_dir, tail } => {
            let report = commands::cmd_report(&run_dir, tail)?;
            print!("{}", report.render_table());
        }
    }
    Ok(())
}
