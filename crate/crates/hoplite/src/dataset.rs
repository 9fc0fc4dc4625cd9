//! JSONL dataset and artifact I/O.
//!
//! All stage files share one convention: an optional first line holding an
//! [`ArtifactMeta`] record (config hash, seed, artifact kind), then one
//! record per line. Files without a meta line — externally supplied
//! datasets — load fine and simply make no provenance claim.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::DatasetError;
use crate::index::Document;
use crate::protocol::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Synthetic,
}

/// One question with its gold answer and evidence documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    pub gold_doc_ids: BTreeSet<String>,
    #[serde(rename = "hops")]
    pub hop_count: usize,
    pub provenance: Provenance,
}

impl QaInstance {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.gold_doc_ids.is_empty() {
            return Err(DatasetError::EmptyGoldDocs(self.id.clone()));
        }
        if self.hop_count == 0 {
            return Err(DatasetError::ZeroHops(self.id.clone()));
        }
        Ok(())
    }
}

/// Provenance header embedded as the first line of generated artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    #[serde(rename = "_meta")]
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(kind: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            kind: kind.to_owned(),
            config_hash: config_hash.to_owned(),
            seed,
        }
    }
}

fn is_meta_line(line: &str) -> bool {
    line.contains("\"_meta\"")
}

/// Write records as JSONL with a leading meta line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    meta: &ArtifactMeta,
    records: impl IntoIterator<Item = T>,
) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, meta).map_err(io_err)?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, &rec).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> DatasetError {
    DatasetError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Read a JSONL file, returning its records and the meta line if present.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
) -> Result<(Vec<T>, Option<ArtifactMeta>), DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut meta = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && is_meta_line(&line) {
            meta = serde_json::from_str(&line).ok();
            if meta.is_some() {
                continue;
            }
        }
        let rec = serde_json::from_str(&line)
            .map_err(|source| DatasetError::BadRecord { line: i + 1, source })?;
        records.push(rec);
    }
    Ok((records, meta))
}

pub fn read_corpus(path: &Path) -> Result<(Vec<Document>, Option<ArtifactMeta>), DatasetError> {
    read_jsonl(path)
}

pub fn read_instances(
    path: &Path,
) -> Result<(Vec<QaInstance>, Option<ArtifactMeta>), DatasetError> {
    let (instances, meta): (Vec<QaInstance>, _) = read_jsonl(path)?;
    for inst in &instances {
        inst.validate()?;
    }
    Ok((instances, meta))
}

/// Dump form of a trajectory: segments plus the mask as run-lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub prompt_id: String,
    pub segments: Vec<crate::protocol::Segment>,
    /// Alternating `(mask_value, run_length)` pairs.
    pub mask_rle: Vec<(u8, usize)>,
    pub terminated_by: Option<crate::protocol::Termination>,
}

impl From<&Trajectory> for TrajectoryDump {
    fn from(traj: &Trajectory) -> Self {
        Self {
            prompt_id: traj.prompt_id.clone(),
            segments: traj.segments.clone(),
            mask_rle: traj.mask_run_lengths(),
            terminated_by: traj.terminated_by,
        }
    }
}

pub fn write_trajectories(
    path: &Path,
    meta: &ArtifactMeta,
    trajectories: &[Trajectory],
) -> Result<(), DatasetError> {
    write_jsonl(path, meta, trajectories.iter().map(TrajectoryDump::from))
}
