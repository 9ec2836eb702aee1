use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{train, EpochRecord, TrainConfig};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, DECODER_PRESETS, ENCODER_PRESETS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum GridStatus {
    Done {
        /// Selection metric of the best validation epoch.
        val_metric: f64,
        best_epoch: usize,
        history: Vec<EpochRecord>,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub key: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(flatten)]
    pub status: GridStatus,
    /// Loaded from the result cache rather than trained in this call.
    #[serde(skip)]
    pub cached: bool,
}

impl GridOutcome {
    pub fn val_metric(&self) -> Option<f64> {
        match self.status {
            GridStatus::Done { val_metric, .. } => Some(val_metric),
            GridStatus::Failed { .. } => None,
        }
    }
}

/// Grid outcomes ranked best first; failed points come last.
#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub outcomes: Vec<GridOutcome>,
}

impl GridReport {
    pub fn best(&self) -> Option<&GridOutcome> {
        self.outcomes.first().filter(|o| o.val_metric().is_some())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4} {:>8} {:>6} {:>5} {:>6} {:>14} {:>17} {:>8}",
            "rank", "lr", "epochs", "alpha", "d", "encoder", "decoder", "val"
        );
        for (i, o) in self.outcomes.iter().enumerate() {
            let m = &o.model;
            let val = o
                .val_metric()
                .map_or_else(|| "failed".to_string(), |v| format!("{:.1}", v * 100.0));
            let _ = writeln!(
                out,
                "{:>4} {:>8.0e} {:>6} {:>5} {:>6} {:>14} {:>17} {:>8}",
                i + 1,
                o.train.lr,
                o.train.epochs,
                m.alpha,
                m.d_model,
                format!("({},{},{})", m.n_heads, m.ff_dim, m.n_layers),
                format!(
                    "({},{},{},{})",
                    m.decoder_dim, m.decoder_heads, m.decoder_ff, m.decoder_layers
                ),
                val
            );
        }
        out
    }
}

/// Cache key: SHA-256 over the fitted model config, the train config and the
/// manifest fingerprint.
pub fn point_key(model: &ModelConfig, train: &TrainConfig, manifest_fingerprint: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model)?);
    h.update([0]);
    h.update(serde_json::to_vec(train)?);
    h.update([0]);
    h.update(manifest_fingerprint.as_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Trains every grid point and ranks by validation metric. Configs are all
/// validated before any training starts. With a cache directory, finished
/// points are stored as `<key>.json` and skipped on later calls.
pub fn grid_search(
    grid: &[(ModelConfig, TrainConfig)],
    manifest: &DatasetManifest,
    cache_dir: Option<&Path>,
) -> Result<GridReport> {
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let mut fitted = Vec::with_capacity(grid.len());
    for (i, (m, t)) in grid.iter().enumerate() {
        let mut m = m.clone();
        m.fit_to(manifest);
        let m = m.normalized();
        m.validate()
            .and_then(|_| t.validate())
            .map_err(|e| Error::Config(format!("grid point {i}: {e}")))?;
        fitted.push((m, t.clone()));
    }
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let fingerprint = manifest.fingerprint();
    let mut outcomes = Vec::with_capacity(grid.len());
    for (i, (model, train_cfg)) in fitted.into_iter().enumerate() {
        let key = point_key(&model, &train_cfg, &fingerprint)?;
        let path = cache_dir.map(|d| d.join(format!("{key}.json")));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut o: GridOutcome = serde_json::from_str(&text)?;
            o.cached = true;
            log::info!("grid point {i}: cached");
            outcomes.push(o);
            continue;
        }
        log::info!("grid point {i}: training");
        let status = match train(&model, &train_cfg, manifest) {
            Ok(run) => {
                let best = &run.history.epochs[run.best_epoch - 1];
                GridStatus::Done {
                    val_metric: super::primary_metric(run.best_model.config(), &best.val_metrics),
                    best_epoch: run.best_epoch,
                    history: run.history.epochs,
                }
            }
            Err(e) => {
                log::warn!("grid point {i} failed: {e}");
                GridStatus::Failed { error: e.to_string() }
            }
        };
        let o = GridOutcome {
            key,
            model,
            train: train_cfg,
            status,
            cached: false,
        };
        if let Some(p) = &path {
            crate::io::atomic_write(p, &serde_json::to_vec_pretty(&o)?)?;
        }
        outcomes.push(o);
    }
    // Stable sort keeps grid order among equal scores.
    outcomes.sort_by(|a, b| match (a.val_metric(), b.val_metric()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(GridReport { outcomes })
}

/// The published grid: learning rate, epochs, alpha, model width, encoder
/// shape and decoder shape, two values each. Other fields come from the base
/// configs.
pub fn reference_grid(base_model: &ModelConfig, base_train: &TrainConfig) -> Vec<(ModelConfig, TrainConfig)> {
    let mut out = Vec::with_capacity(64);
    for lr in [1e-4, 1e-5] {
        for epochs in [16, 32] {
            for alpha in [0.2, 0.8] {
                for d_model in [512, 1024] {
                    for enc in ENCODER_PRESETS {
                        for dec in DECODER_PRESETS {
                            let mut m = base_model.clone();
                            m.alpha = alpha;
                            m.d_model = d_model;
                            m.set_encoder_preset(enc);
                            m.set_decoder_preset(dec);
                            let t = TrainConfig {
                                lr,
                                epochs,
                                lr_drop_at: None,
                                ..base_train.clone()
                            };
                            out.push((m, t));
                        }
                    }
                }
            }
        }
    }
    out
}
