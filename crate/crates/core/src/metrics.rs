//! Per-epoch training metrics, written as one JSON object per line.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: String,
    /// Role of the model being trained.
    pub role: String,
    /// 0-based epoch index.
    pub epoch: usize,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    /// Mean optimized loss over the epoch's steps.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_i: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_d2: Option<f64>,
    /// Mean cross-entropy over labeled samples only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_sup: Option<f64>,
    /// Mean distillation loss over all samples.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_unsup: Option<f64>,
    /// Training accuracy on labeled samples.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    pub steps: usize,
}

impl EpochMetrics {
    pub fn new(stage: &str, role: &str, epoch: usize, lr: f64) -> Self {
        Self {
            stage: stage.to_string(),
            role: role.to_string(),
            epoch,
            lr,
            loss: 0.0,
            l_i: None,
            l_d1: None,
            l_d2: None,
            l_sup: None,
            l_unsup: None,
            accuracy: None,
            steps: 0,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Appends metrics records to a JSONL file.
#[derive(Debug, Clone)]
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    /// Opens `path` for appending, creating parent directories.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn append(&self, m: &EpochMetrics) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}", m.to_json_line()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
