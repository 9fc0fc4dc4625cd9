//! Workflows behind the CLI subcommands. The binary itself only parses
//! arguments and dispatches here; examples call these directly.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::chainworld;
use crate::checkpoint::Checkpoint;
use crate::config::{GeneratorMode, RunConfig};
use crate::dataset::{
    read_corpus, read_instances, write_jsonl, write_trajectories, ArtifactMeta, QaInstance,
};
use crate::error::{ConfigError, HopliteError, PipelineError};
use crate::eval::{evaluate, EvalReport};
use crate::index::{Bm25Index, Bm25Params};
use crate::pipeline::{
    self, accepted_to_instance, generator::GeneratorClient,
    generator::HttpGeneratorClient, generator::ScriptedChainworldGenerator, mine_anchors,
    SolvabilityRecord, SyntheticCandidate, Verdict,
};
use crate::policy::TabularPolicy;
use crate::report::{summarize_run, RunReport};
use crate::trainer::{train, TrainOutcome};

pub fn make_generator(cfg: &RunConfig) -> Result<Box<dyn GeneratorClient>, HopliteError> {
    match cfg.generator.mode {
        GeneratorMode::ScriptedChainworld => Ok(Box::new(ScriptedChainworldGenerator)),
        GeneratorMode::Http => Ok(Box::new(
            HttpGeneratorClient::new(&cfg.generator).map_err(PipelineError::Generator)?,
        )),
    }
}

fn load_index_checked(
    cfg: &RunConfig,
    path: &Path,
    force: bool,
) -> Result<Bm25Index, HopliteError> {
    RunConfig::require_paths(&[(path, "index")])?;
    let index = Bm25Index::load(path)?;
    let recorded = (!index.config_hash().is_empty()).then(|| index.config_hash().to_owned());
    cfg.check_artifact_hash(path, recorded.as_deref(), force)?;
    Ok(index)
}

fn load_instances_checked(
    cfg: &RunConfig,
    path: &Path,
    force: bool,
) -> Result<Vec<QaInstance>, HopliteError> {
    RunConfig::require_paths(&[(path, "dataset")])?;
    let (instances, meta) = read_instances(path)?;
    cfg.check_artifact_hash(path, meta.as_ref().map(|m| m.config_hash.as_str()), force)?;
    Ok(instances)
}

fn load_checkpoint_checked(
    cfg: &RunConfig,
    path: &Path,
    force: bool,
) -> Result<Checkpoint, HopliteError> {
    RunConfig::require_paths(&[(path, "checkpoint")])?;
    let ck = Checkpoint::load(path)?;
    cfg.check_artifact_hash(path, Some(&ck.config_hash), force)?;
    Ok(ck)
}

/// Generate the chain-world corpus and question set.
pub fn cmd_chainworld(cfg: &RunConfig, out_dir: &Path) -> Result<(usize, usize), HopliteError> {
    std::fs::create_dir_all(out_dir)?;
    let (docs, instances) = chainworld::generate(&cfg.chainworld)?;
    let hash = cfg.config_hash();
    write_jsonl(
        &out_dir.join("corpus.jsonl"),
        &ArtifactMeta::new("corpus", &hash, cfg.chainworld.seed),
        docs.iter().cloned(),
    )?;
    write_jsonl(
        &out_dir.join("instances.jsonl"),
        &ArtifactMeta::new("instances", &hash, cfg.chainworld.seed),
        instances.iter().cloned(),
    )?;
    Ok((docs.len(), instances.len()))
}

/// Build and persist the BM25 index over a corpus file.
pub fn cmd_index(
    cfg: &RunConfig,
    corpus_path: &Path,
    out_path: &Path,
    force: bool,
) -> Result<usize, HopliteError> {
    RunConfig::require_paths(&[(corpus_path, "corpus")])?;
    let (docs, meta) = read_corpus(corpus_path)?;
    cfg.check_artifact_hash(
        corpus_path,
        meta.as_ref().map(|m| m.config_hash.as_str()),
        force,
    )?;
    let index = Bm25Index::build_tagged(
        docs,
        Bm25Params::default(),
        &cfg.config_hash(),
        cfg.seed,
    )?;
    if index.dedup_dropped() > 0 {
        log::info!("dropped {} duplicate bodies during indexing", index.dedup_dropped());
    }
    index.save(out_path)?;
    Ok(index.doc_count())
}

/// Train (or resume) on the configured datasets.
pub fn cmd_train(
    cfg: &RunConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    force: bool,
) -> Result<TrainOutcome, HopliteError> {
    let index = load_index_checked(cfg, &cfg.paths.index, force)?;
    let original = load_instances_checked(cfg, &cfg.paths.instances, force)?;
    let synthetic = match &cfg.paths.synthetic_instances {
        Some(path) => Some(load_instances_checked(cfg, path, force)?),
        None => None,
    };
    let resume_ck = match resume {
        Some(path) => {
            let ck = load_checkpoint_checked(cfg, path, force)?;
            if ck.seed != cfg.seed && !force {
                return Err(ConfigError::CheckpointMismatch(format!(
                    "checkpoint seed {} does not match config seed {}",
                    ck.seed, cfg.seed
                ))
                .into());
            }
            Some(ck)
        }
        None => None,
    };
    train(cfg, &index, &original, synthetic.as_deref(), out_dir, resume_ck)
}

/// Pass@k evaluation of a checkpoint on a dataset.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    k: usize,
    out_dir: &Path,
    dump_trajectories: Option<&Path>,
    force: bool,
) -> Result<EvalReport, HopliteError> {
    let index = load_index_checked(cfg, &cfg.paths.index, force)?;
    let instances = load_instances_checked(cfg, dataset, force)?;
    let ck = load_checkpoint_checked(cfg, checkpoint, force)?;
    std::fs::create_dir_all(out_dir)?;

    let mut dumped = Vec::new();
    let report = evaluate(
        &ck.policy,
        &instances,
        &index,
        &cfg.rollout,
        k,
        cfg.seed,
        &cfg.config_hash(),
        dump_trajectories.is_some().then_some(&mut dumped),
    );
    std::fs::write(
        out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(out_dir.join("eval.csv"), report.to_csv())?;
    if let Some(path) = dump_trajectories {
        write_trajectories(
            path,
            &ArtifactMeta::new("trajectories", &cfg.config_hash(), cfg.seed),
            &dumped,
        )?;
    }
    Ok(report)
}

/// Mining: score solvability of every instance under a checkpoint policy
/// and keep the lowest-scoring `select_n` (capped at the dataset size).
pub fn cmd_pipeline_mine(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    dataset: &Path,
    out_path: &Path,
    force: bool,
) -> Result<Vec<SolvabilityRecord>, HopliteError> {
    let index = load_index_checked(cfg, &cfg.paths.index, force)?;
    let instances = load_instances_checked(cfg, dataset, force)?;
    let policy = match checkpoint {
        Some(path) => load_checkpoint_checked(cfg, path, force)?.policy,
        None => TabularPolicy::uniform(),
    };
    let records = pipeline::score_dataset_solvability(
        &policy,
        &instances,
        &index,
        &cfg.rollout,
        &cfg.pipeline,
        cfg.seed,
        cfg.workers,
    )
    .map_err(HopliteError::Pipeline)?;
    let select = cfg.pipeline.select_n.min(records.len());
    let chosen = mine_anchors(&records, select).map_err(HopliteError::Pipeline)?;
    let by_id: HashMap<&str, &SolvabilityRecord> =
        records.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let selected: Vec<SolvabilityRecord> = chosen
        .iter()
        .map(|id| (*by_id.get(id.as_str()).expect("mined id exists")).clone())
        .collect();
    write_jsonl(
        out_path,
        &ArtifactMeta::new("anchors", &cfg.config_hash(), cfg.seed),
        selected.iter().cloned(),
    )?;
    Ok(selected)
}

fn missing_stage(path: &Path, stage: &str) -> HopliteError {
    HopliteError::Pipeline(PipelineError::MissingStage {
        path: path.display().to_string(),
        stage: stage.to_owned(),
    })
}

/// Generation: one prompt per (anchor, slot), resumable at anchor
/// granularity — anchors already fully present in the output file are not
/// re-queried.
pub fn cmd_pipeline_synthesize(
    cfg: &RunConfig,
    anchors_path: &Path,
    dataset: &Path,
    out_path: &Path,
    force: bool,
) -> Result<Vec<SyntheticCandidate>, HopliteError> {
    if !anchors_path.exists() {
        return Err(missing_stage(anchors_path, "pipeline mine"));
    }
    let index = load_index_checked(cfg, &cfg.paths.index, force)?;
    let instances = load_instances_checked(cfg, dataset, force)?;
    let (records, meta): (Vec<SolvabilityRecord>, _) = crate::dataset::read_jsonl(anchors_path)?;
    cfg.check_artifact_hash(
        anchors_path,
        meta.as_ref().map(|m| m.config_hash.as_str()),
        force,
    )?;
    let by_id: HashMap<&str, &QaInstance> =
        instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let anchors: Vec<QaInstance> = records
        .iter()
        .filter_map(|r| by_id.get(r.instance_id.as_str()).map(|&i| i.clone()))
        .collect();

    let existing: Vec<SyntheticCandidate> = if out_path.exists() {
        let (found, _): (Vec<SyntheticCandidate>, _) = crate::dataset::read_jsonl(out_path)?;
        found
    } else {
        Vec::new()
    };
    let mut per_anchor_existing: HashMap<&str, Vec<&SyntheticCandidate>> = HashMap::new();
    for cand in &existing {
        per_anchor_existing
            .entry(cand.anchor_id.as_str())
            .or_default()
            .push(cand);
    }

    let client = make_generator(cfg)?;
    let mut candidates: Vec<SyntheticCandidate> = Vec::new();
    for (a_idx, anchor) in anchors.iter().enumerate() {
        match per_anchor_existing.get(anchor.id.as_str()) {
            Some(found) if found.len() == cfg.pipeline.per_anchor => {
                candidates.extend(found.iter().map(|&c| c.clone()));
            }
            _ => {
                let new = pipeline::generate_candidates_for_anchor(
                    anchor,
                    a_idx,
                    &anchors,
                    &index,
                    client.as_ref(),
                    &cfg.pipeline,
                    &cfg.generator,
                    cfg.seed,
                );
                candidates.extend(new);
            }
        }
    }
    write_jsonl(
        out_path,
        &ArtifactMeta::new("candidates", &cfg.config_hash(), cfg.seed),
        candidates.iter().cloned(),
    )?;
    Ok(candidates)
}

/// Verification: resumable per candidate — ids already present in the
/// output file keep their verdicts and are not re-queried. `tau` is taken
/// from config (override it for sweeps before calling).
pub fn cmd_pipeline_verify(
    cfg: &RunConfig,
    candidates_path: &Path,
    dataset: &Path,
    out_path: &Path,
    force: bool,
) -> Result<Vec<SyntheticCandidate>, HopliteError> {
    if !candidates_path.exists() {
        return Err(missing_stage(candidates_path, "pipeline synthesize"));
    }
    let index = load_index_checked(cfg, &cfg.paths.index, force)?;
    let instances = load_instances_checked(cfg, dataset, force)?;
    let (candidates, meta): (Vec<SyntheticCandidate>, _) =
        crate::dataset::read_jsonl(candidates_path)?;
    cfg.check_artifact_hash(
        candidates_path,
        meta.as_ref().map(|m| m.config_hash.as_str()),
        force,
    )?;

    let done: HashMap<String, SyntheticCandidate> = if out_path.exists() {
        let (found, _): (Vec<SyntheticCandidate>, _) = crate::dataset::read_jsonl(out_path)?;
        found.into_iter().map(|c| (c.id.clone(), c)).collect()
    } else {
        HashMap::new()
    };
    let todo: Vec<SyntheticCandidate> = candidates
        .iter()
        .filter(|c| !done.contains_key(&c.id))
        .cloned()
        .collect();

    let anchors: HashMap<String, QaInstance> =
        instances.iter().map(|i| (i.id.clone(), i.clone())).collect();
    let client = make_generator(cfg)?;
    let fresh = pipeline::verify_candidates(
        &todo,
        &anchors,
        &index,
        client.as_ref(),
        &cfg.pipeline,
        &cfg.generator,
        cfg.workers,
    );
    let fresh_by_id: HashMap<&str, &SyntheticCandidate> =
        fresh.iter().map(|c| (c.id.as_str(), c)).collect();

    // Preserve candidate order from the input stage file.
    let verified: Vec<SyntheticCandidate> = candidates
        .iter()
        .map(|c| {
            done.get(&c.id)
                .cloned()
                .or_else(|| fresh_by_id.get(c.id.as_str()).map(|&v| v.clone()))
                .expect("every candidate verified or carried over")
        })
        .collect();
    write_jsonl(
        out_path,
        &ArtifactMeta::new("verified", &cfg.config_hash(), cfg.seed),
        verified.iter().cloned(),
    )?;
    Ok(verified)
}

pub struct MixOutput {
    pub manifest: Vec<pipeline::MixDraw>,
    pub accepted: Vec<QaInstance>,
}

/// Mixing: turn accepted candidates into instances and emit a seeded
/// sampling manifest over original + synthetic.
pub fn cmd_pipeline_mix(
    cfg: &RunConfig,
    dataset: &Path,
    verified_path: &Path,
    draws: usize,
    out_manifest: &Path,
    out_instances: &Path,
    force: bool,
) -> Result<MixOutput, HopliteError> {
    if !verified_path.exists() {
        return Err(missing_stage(verified_path, "pipeline verify"));
    }
    let original = load_instances_checked(cfg, dataset, force)?;
    let (verified, meta): (Vec<SyntheticCandidate>, _) =
        crate::dataset::read_jsonl(verified_path)?;
    cfg.check_artifact_hash(
        verified_path,
        meta.as_ref().map(|m| m.config_hash.as_str()),
        force,
    )?;
    let by_id: HashMap<&str, &QaInstance> =
        original.iter().map(|i| (i.id.as_str(), i)).collect();
    let accepted: Vec<QaInstance> = verified
        .iter()
        .filter(|c| c.verdict == Verdict::Accepted)
        .filter_map(|c| {
            by_id
                .get(c.anchor_id.as_str())
                .and_then(|anchor| accepted_to_instance(c, anchor))
        })
        .collect();
    let manifest = pipeline::compose_training_mix(
        &original,
        &accepted,
        cfg.pipeline.mix_ratio,
        draws,
        crate::env::derive_seed(cfg.seed, 0x04),
    )
    .map_err(HopliteError::Pipeline)?;
    let hash = cfg.config_hash();
    write_jsonl(
        out_instances,
        &ArtifactMeta::new("synthetic_instances", &hash, cfg.seed),
        accepted.iter().cloned(),
    )?;
    write_jsonl(
        out_manifest,
        &ArtifactMeta::new("mix_manifest", &hash, cfg.seed),
        manifest.iter().cloned(),
    )?;
    Ok(MixOutput { manifest, accepted })
}

/// Aggregate a run directory's metrics into a report table and CSV.
pub fn cmd_report(run_dir: &Path, tail: usize) -> Result<RunReport, HopliteError> {
    let metrics = run_dir.join("metrics.csv");
    RunConfig::require_paths(&[(&metrics, "metrics")])?;
    let report = summarize_run(&metrics, tail)?;
    std::fs::write(run_dir.join("report.csv"), report.to_csv())?;
    Ok(report)
}

/// Resolve a path relative to the config file's directory when relative.
pub fn resolve_path(config_path: &Path, target: &Path) -> PathBuf {
    if target.is_absolute() {
        target.to_path_buf()
    } else {
        config_path
            .parent()
            .map(|dir| dir.join(target))
            .unwrap_or_else(|| target.to_path_buf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainworld::ChainWorldSpec;

    fn temp_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.steps = 3;
        cfg.checkpoint_interval = 2;
        cfg.chainworld = ChainWorldSpec {
            entity_count: 21,
            distractor_count: 12,
            seed: 9,
            ..Default::default()
        };
        cfg.pipeline.select_n = 3;
        cfg.pipeline.per_anchor = 2;
        cfg.paths.corpus = dir.join("corpus.jsonl");
        cfg.paths.index = dir.join("corpus.idx");
        cfg.paths.instances = dir.join("instances.jsonl");
        cfg
    }

    #[test]
    fn full_pipeline_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = temp_cfg(dir.path());

        let (n_docs, n_instances) = cmd_chainworld(&cfg, dir.path()).unwrap();
        assert!(n_docs > 0 && n_instances > 0);
        let indexed = cmd_index(&cfg, &cfg.paths.corpus, &cfg.paths.index, false).unwrap();
        assert_eq!(indexed, n_docs);

        // Index rebuild determinism.
        let alt = dir.path().join("again.idx");
        cmd_index(&cfg, &cfg.paths.corpus, &alt, false).unwrap();
        assert_eq!(
            std::fs::read(&cfg.paths.index).unwrap(),
            std::fs::read(&alt).unwrap()
        );

        let run_dir = dir.path().join("run");
        let outcome = cmd_train(&cfg, &run_dir, None, false).unwrap();
        assert_eq!(outcome.metrics.len(), 3);

        let report = cmd_eval(
            &cfg,
            &run_dir.join("checkpoint_final.txt"),
            &cfg.paths.instances,
            2,
            &dir.path().join("eval"),
            None,
            false,
        )
        .unwrap();
        assert_eq!(report.k, 2);

        let anchors_path = dir.path().join("anchors.jsonl");
        let mined = cmd_pipeline_mine(
            &cfg,
            Some(&run_dir.join("checkpoint_final.txt")),
            &cfg.paths.instances,
            &anchors_path,
            false,
        )
        .unwrap();
        assert_eq!(mined.len(), 3);
        assert!(mined.windows(2).all(|w| w[0].score <= w[1].score));

        let candidates_path = dir.path().join("candidates.jsonl");
        let candidates =
            cmd_pipeline_synthesize(&cfg, &anchors_path, &cfg.paths.instances, &candidates_path, false)
                .unwrap();
        assert_eq!(candidates.len(), 3 * cfg.pipeline.per_anchor);

        let verified_path = dir.path().join("verified.jsonl");
        let verified =
            cmd_pipeline_verify(&cfg, &candidates_path, &cfg.paths.instances, &verified_path, false)
                .unwrap();
        let accepted = verified.iter().filter(|c| c.verdict == Verdict::Accepted).count();
        assert!(accepted >= 1, "scripted pipeline should accept candidates");

        let manifest_path = dir.path().join("manifest.jsonl");
        let synth_path = dir.path().join("synthetic.jsonl");
        let mix = cmd_pipeline_mix(
            &cfg,
            &cfg.paths.instances,
            &verified_path,
            40,
            &manifest_path,
            &synth_path,
            false,
        )
        .unwrap();
        assert_eq!(mix.manifest.len(), 40);
        assert_eq!(mix.accepted.len(), accepted);

        let run_report = cmd_report(&run_dir, 2).unwrap();
        assert_eq!(run_report.steps, 3);
    }

    #[test]
    fn stage_order_violation_names_the_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = temp_cfg(dir.path());
        cmd_chainworld(&cfg, dir.path()).unwrap();
        cmd_index(&cfg, &cfg.paths.corpus, &cfg.paths.index, false).unwrap();
        let err = cmd_pipeline_verify(
            &cfg,
            &dir.path().join("candidates.jsonl"),
            &cfg.paths.instances,
            &dir.path().join("verified.jsonl"),
            false,
        )
        .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("pipeline synthesize"), "got: {text}");
    }

    #[test]
    fn mismatched_hash_is_refused_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = temp_cfg(dir.path());
        cmd_chainworld(&cfg, dir.path()).unwrap();
        cmd_index(&cfg, &cfg.paths.corpus, &cfg.paths.index, false).unwrap();

        let mut other = cfg.clone();
        other.seed = 12345;
        let err = cmd_train(&other, &dir.path().join("run"), None, false).unwrap_err();
        assert!(matches!(
            err,
            HopliteError::Config(ConfigError::HashMismatch { .. })
        ));
        // Forced, it proceeds.
        cmd_train(&other, &dir.path().join("run2"), None, true).unwrap();
    }

    #[test]
    fn verify_resume_skips_done_candidates() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = temp_cfg(dir.path());
        cfg.pipeline.per_anchor = 1;
        cmd_chainworld(&cfg, dir.path()).unwrap();
        cmd_index(&cfg, &cfg.paths.corpus, &cfg.paths.index, false).unwrap();
        let anchors_path = dir.path().join("anchors.jsonl");
        cmd_pipeline_mine(&cfg, None, &cfg.paths.instances, &anchors_path, false).unwrap();
        let candidates_path = dir.path().join("candidates.jsonl");
        cmd_pipeline_synthesize(&cfg, &anchors_path, &cfg.paths.instances, &candidates_path, false)
            .unwrap();

        let verified_path = dir.path().join("verified.jsonl");
        let first =
            cmd_pipeline_verify(&cfg, &candidates_path, &cfg.paths.instances, &verified_path, false)
                .unwrap();
        // Re-running keeps identical verdicts (and re-queries nothing).
        let second =
            cmd_pipeline_verify(&cfg, &candidates_path, &cfg.paths.instances, &verified_path, false)
                .unwrap();
        assert_eq!(first, second);
    }
}
