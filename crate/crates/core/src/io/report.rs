use super::config::ExperimentConfig;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::experiments::{AccuracyTable, MetricRow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Bumped whenever a column of the metrics CSV or a summary field changes.
pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "run_id,strategy,order,temperature,seed,epoch,task,split,accuracy";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

pub fn metrics_csv_bytes(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut out = format!("{METRICS_HEADER}\n").into_bytes();
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    out.extend(w.into_inner().map_err(|e| Error::Data(e.to_string()))?);
    Ok(out)
}

/// Writes one line per epoch, task and run. Returns the file's bytes.
pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<Vec<u8>> {
    let bytes = metrics_csv_bytes(rows)?;
    write_atomic(path, &bytes)?;
    Ok(bytes)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Format(format!("{}: not a metrics CSV", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Accuracy tables plus free-form details of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub tables: Vec<AccuracyTable>,
    pub details: serde_json::Value,
}

impl Summary {
    pub fn new(command: &str, seed: u64, tables: Vec<AccuracyTable>, details: serde_json::Value) -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            command: command.into(),
            seed,
            tables,
            details,
        }
    }

    pub fn write(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = serde_json::to_vec_pretty(self)?;
        write_atomic(path, &bytes)?;
        Ok(bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHash {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

/// Config echo, seed and artifact hashes of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactHash>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            command: command.into(),
            seed: config.seed,
            config_hash: hex::encode(config.hash()),
            config: config.clone(),
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &str, bytes: &[u8]) {
        self.artifacts.push(ArtifactHash {
            path: path.into(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Artifacts under `dir` whose current hash differs from the recorded one.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| {
                std::fs::read(dir.join(&a.path)).map_or(true, |bytes| sha256_hex(&bytes) != a.sha256)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::StrategyKind;

    #[test]
    fn metrics_csv_round_trip() {
        let rows = vec![MetricRow {
            run_id: "r0".into(),
            strategy: StrategyKind::Cldrm,
            order: "1-2".into(),
            temperature: 2.0,
            seed: 7,
            epoch: 3,
            task: 1,
            split: "test".into(),
            accuracy: 61.71875,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let bytes = write_metrics_csv(&rows, &path).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\nr0,cldrm,1-2,2.0,7,3,1,test,61.71875\n"));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn manifest_detects_changed_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        let mut m = Manifest::new("train", &ExperimentConfig::default());
        m.record("a.txt", b"alpha");
        assert!(m.mismatches(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.txt"), b"beta").unwrap();
        assert_eq!(m.mismatches(dir.path()), vec!["a.txt".to_string()]);
    }
}
