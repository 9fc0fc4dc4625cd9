//! Run configuration: one TOML file drives every command.
//!
//! Every generated artifact embeds `config_hash(config)` plus the run
//! seed; commands refuse to mix artifacts stamped with a different hash
//! unless forced. Hashing covers the canonical TOML serialization, so
//! semantically identical configs hash identically regardless of source
//! formatting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chainworld::ChainWorldSpec;
use crate::error::ConfigError;
use crate::grpo::GrpoConfig;
use crate::protocol::RolloutConfig;
use crate::reward::RewardOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    /// Training steps for `train`.
    pub steps: u64,
    pub checkpoint_interval: u64,
    /// Worker threads for rollouts and verification (1 = sequential).
    pub workers: usize,
    pub paths: PathsConfig,
    pub rollout: RolloutConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardOptions,
    pub chainworld: ChainWorldSpec,
    pub pipeline: PipelineConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: 500,
            checkpoint_interval: 100,
            workers: 1,
            paths: PathsConfig::default(),
            rollout: RolloutConfig::default(),
            grpo: GrpoConfig::default(),
            reward: RewardOptions::default(),
            chainworld: ChainWorldSpec::default(),
            pipeline: PipelineConfig::default(),
            generator: GeneratorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub instances: PathBuf,
    /// Optional second instance file for training mixes.
    pub synthetic_instances: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Acceptance threshold on oracle/retrieval answer agreement F1.
    pub tau: f64,
    /// Candidates at or above this token-F1 to their anchor (or to an
    /// earlier candidate) are rejected as too similar.
    pub similarity_threshold: f64,
    /// Candidates requested per anchor.
    pub per_anchor: usize,
    /// Anchors kept by the mining stage.
    pub select_n: usize,
    /// Retrieval depth for the verification answer.
    pub verify_k: usize,
    /// Rollouts per instance when scoring solvability.
    pub solvability_k: usize,
    /// Probability that a training draw comes from the synthetic set.
    pub mix_ratio: f64,
    /// Variance estimator used inside the solvability score.
    pub variance_mode: VarianceMode,
    /// In-context exemplars per generation prompt.
    pub exemplars_per_prompt: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            similarity_threshold: 0.7,
            per_anchor: 3,
            select_n: 16,
            verify_k: 40,
            solvability_k: 5,
            mix_ratio: 0.5,
            variance_mode: VarianceMode::Population,
            exemplars_per_prompt: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    /// Deterministic scripted generator that reads chain-world documents.
    ScriptedChainworld,
    /// Live HTTP completion endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    pub endpoint: String,
    pub model: String,
    pub retries: u32,
    pub timeout_s: u64,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Environment variable holding the API key for HTTP mode.
    pub api_key_env: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            mode: GeneratorMode::ScriptedChainworld,
            endpoint: String::new(),
            model: String::new(),
            retries: 3,
            timeout_s: 30,
            temperature: 0.7,
            max_tokens: 64,
            api_key_env: "HOPLITE_GENERATOR_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Samples per instance for pass@k.
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 8 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collect every invariant violation instead of failing on the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = self.rollout.validate() {
            problems.push(e);
        }
        if let Err(e) = self.grpo.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.chainworld.validate() {
            problems.push(e.to_string());
        }
        let p = &self.pipeline;
        for (name, v) in [
            ("pipeline.tau", p.tau),
            ("pipeline.similarity_threshold", p.similarity_threshold),
            ("pipeline.mix_ratio", p.mix_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if p.per_anchor < 1 {
            problems.push("pipeline.per_anchor must be >= 1".into());
        }
        if p.verify_k < 1 {
            problems.push("pipeline.verify_k must be >= 1".into());
        }
        if p.solvability_k < 2 {
            problems.push("pipeline.solvability_k must be >= 2".into());
        }
        if self.workers < 1 {
            problems.push("workers must be >= 1".into());
        }
        if self.checkpoint_interval < 1 {
            problems.push("checkpoint_interval must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Preflight(problems))
        }
    }

    /// Stable 128-bit hash of the canonical serialization, hex-encoded.
    pub fn config_hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Verify that each labelled path exists, reporting all misses.
    pub fn require_paths(paths: &[(&Path, &str)]) -> Result<(), ConfigError> {
        let missing: Vec<String> = paths
            .iter()
            .filter(|(p, _)| !p.exists())
            .map(|(p, label)| format!("{label} path does not exist: {}", p.display()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Preflight(missing))
        }
    }

    /// Enforce the artifact-hash contract: a recorded hash must match the
    /// active config unless `force` is set. Artifacts without a recorded
    /// hash make no claim and always pass.
    pub fn check_artifact_hash(
        &self,
        path: &Path,
        recorded: Option<&str>,
        force: bool,
    ) -> Result<(), ConfigError> {
        let expected = self.config_hash();
        match recorded {
            Some(found) if found != expected && !force => Err(ConfigError::HashMismatch {
                path: path.display().to_string(),
                found: found.to_owned(),
                expected,
            }),
            _ => Ok(()),
        }
    }
}
