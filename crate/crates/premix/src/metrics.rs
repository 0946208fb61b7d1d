//! Append-only JSON-lines metrics log: one record per epoch per phase.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub phase: String,
    pub epoch: usize,
    pub total_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mix_source_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mix_loss: Option<f64>,
    pub lr_weights: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_bias_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub config_hash: String,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        let values = [
            Some(self.total_loss),
            self.source_loss,
            self.mix_source_loss,
            self.mix_loss,
            Some(self.lr_weights),
            self.lr_bias_norm,
            self.test_accuracy,
        ];
        if values.into_iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "metrics record for {} epoch {}",
                self.phase, self.epoch
            )));
        }
        Ok(())
    }
}

pub struct MetricsWriter {
    file: fs::File,
}

impl MetricsWriter {
    /// Open (append) a JSON-lines metrics file.
    pub fn open(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { file })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        record.validate()?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io("<metrics>", e))
    }
}

/// Parse a JSON-lines file of arbitrary records.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Append arbitrary serializable records as JSON lines.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::open(&path).unwrap();
        let r1 = MetricsRecord {
            phase: "pretrain".into(),
            epoch: 0,
            total_loss: 12.5,
            source_loss: Some(10.0),
            mix_source_loss: Some(1.5),
            mix_loss: Some(1.0),
            lr_weights: 0.0,
            lr_bias_norm: Some(0.0),
            test_accuracy: None,
            config_hash: "abc".into(),
        };
        let r2 = MetricsRecord {
            phase: "finetune".into(),
            epoch: 3,
            total_loss: 0.6,
            source_loss: None,
            mix_source_loss: None,
            mix_loss: None,
            lr_weights: 2e-4,
            lr_bias_norm: None,
            test_accuracy: Some(0.75),
            config_hash: "abc".into(),
        };
        w.write(&r1).unwrap();
        w.write(&r2).unwrap();
        let back: Vec<MetricsRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![r1, r2]);
    }

    #[test]
    fn non_finite_records_are_rejected() {
        let r = MetricsRecord {
            phase: "pretrain".into(),
            epoch: 0,
            total_loss: f64::NAN,
            source_loss: None,
            mix_source_loss: None,
            mix_loss: None,
            lr_weights: 0.1,
            lr_bias_norm: None,
            test_accuracy: None,
            config_hash: "h".into(),
        };
        assert!(r.validate().is_err());
    }
}
