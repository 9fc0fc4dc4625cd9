//! Error types, one enum per subsystem, aggregated into [`HopliteError`]
//! for the CLI surface.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("document recall is undefined for an empty gold set")]
    EmptyGoldSet,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("unknown document id `{0}`")]
    UnknownDocId(String),
    #[error("bad BM25 parameters: k1={k1}, b={b} (need k1 > 0, 0 <= b <= 1)")]
    BadParams { k1: f64, b: f64 },
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("index format version {found} does not match expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("information can only follow a search segment")]
    InformationWithoutSearch,
    #[error("trajectory is already terminated")]
    AlreadyTerminated,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("group size {0} too small: group statistics need at least 2 samples")]
    GroupTooSmall(usize),
    #[error("chain world needs at least {needed} entities for {hops}-hop chains, have {have}")]
    TooFewEntities { needed: usize, hops: usize, have: usize },
    #[error("chain world spec invalid: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("group size {0} too small: advantages need at least 2 rewards")]
    GroupTooSmall(usize),
    #[error("importance ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("non-finite gradient at parameter {param_index} (value {value}); step aborted, parameters unchanged")]
    NonFiniteGradient { param_index: usize, value: f64 },
    #[error("bad GRPO config: {0}")]
    BadConfig(String),
    #[error("batch has {got} trajectories but {expected} rewards")]
    LengthMismatch { got: usize, expected: usize },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("solvability score needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("F1 sample {0} outside [0, 1]")]
    SampleOutOfRange(f64),
    #[error("cannot select {wanted} anchors from {available} records")]
    SelectTooLarge { wanted: usize, available: usize },
    #[error("mix ratio {0} outside [0, 1]")]
    BadMixRatio(f64),
    #[error("mix ratio {ratio} requires a non-empty {side} dataset")]
    EmptyMixSide { ratio: f64, side: &'static str },
    #[error("candidate `{0}` is not pending verification")]
    NotPending(String),
    #[error("generator error: {0}")]
    Generator(#[from] GeneratorError),
    #[error("missing stage file `{path}`: run `{stage}` first")]
    MissingStage { path: String, stage: String },
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator request failed after {attempts} attempts: {last_error}")]
    Exhausted { attempts: u32, last_error: String },
    #[error("generator endpoint returned status {0}")]
    BadStatus(u16),
    #[error("generator response missing completion text")]
    MalformedResponse,
    #[error("no API key in environment variable `{0}`")]
    MissingApiKey(String),
    #[error("scripted generator has no rule for this prompt")]
    NoScriptedRule,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config pre-flight failed:\n{}", .0.join("\n"))]
    Preflight(Vec<String>),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("artifact `{path}` was produced under config hash {found}, expected {expected} (use --force to override)")]
    HashMismatch { path: String, found: String, expected: String },
    #[error("checkpoint is incompatible: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    BadRecord { line: usize, source: serde_json::Error },
    #[error("instance `{0}` has an empty gold document set")]
    EmptyGoldDocs(String),
    #[error("instance `{0}` has hop count 0")]
    ZeroHops(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Top-level error for the CLI binary.
#[derive(Debug, Error)]
pub enum HopliteError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HopliteError {
    /// CLI exit code: 2 for usage/config problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HopliteError::Config(_) => 2,
            _ => 1,
        }
    }
}
