use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::LossParts;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's mini-batches, with dropout.
    pub train: LossParts,
    pub val: LossParts,
    pub val_metrics: MetricsReport,
}

impl EpochRecord {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "epoch {:>3} lr {:.1e} train {:.4} (task {:.4} caption {:.4}) val {:.4}",
            self.epoch, self.lr, self.train.total, self.train.task, self.train.caption, self.val.total
        );
        for (name, m) in &self.val_metrics.tasks {
            match m.auc {
                Some(auc) => s.push_str(&format!(" {name}.auc {auc:.4}")),
                None => s.push_str(&format!(" {name}.f1 {:.4}", m.macro_f1)),
            }
        }
        s
    }
}

/// Per-epoch records, stored one JSON object per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(r: impl BufRead) -> Result<Self> {
        let mut epochs = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<history>", e))?;
            if !line.trim().is_empty() {
                epochs.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { epochs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::atomic_write(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(std::io::BufReader::new(f))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}
