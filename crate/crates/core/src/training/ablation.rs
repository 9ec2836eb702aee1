use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, primary_metric, train, TrainConfig};
use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Ablations, ModelConfig};

/// Row labels and the single component each row removes, top to bottom.
pub const ABLATION_ROWS: [(&str, Ablations); 5] = [
    ("MemeFier", Ablations { no_external: false, no_caption: false, no_stage1: false, no_stage2: false }),
    ("- External knowledge", Ablations { no_external: true, no_caption: false, no_stage1: false, no_stage2: false }),
    ("- Caption supervision", Ablations { no_external: false, no_caption: true, no_stage1: false, no_stage2: false }),
    ("- Fusion stage 1", Ablations { no_external: false, no_caption: false, no_stage1: true, no_stage2: false }),
    ("- Fusion stage 2", Ablations { no_external: false, no_caption: false, no_stage1: false, no_stage2: true }),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub ablations: Ablations,
    pub parameters: usize,
    pub alpha: f64,
    pub best_epoch: usize,
    /// Selection metric of the best-val checkpoint on the val split.
    pub val_metric: f64,
    pub val: MetricsReport,
    /// Best-val checkpoint on the test split, when the manifest has one.
    pub test: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn full(&self) -> &AblationRow {
        &self.rows[0]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>9} {:>9} {:>10}",
            "", "val AUC", "val acc", "test AUC", "params"
        );
        let _ = writeln!(out, "{}", "-".repeat(64));
        let first_auc = |r: &MetricsReport| r.tasks.values().next().and_then(|m| m.auc);
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{:.1}", a * 100.0));
        for r in &self.rows {
            let acc = r.val.tasks.values().next().map_or(f64::NAN, |m| m.accuracy);
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>9.3} {:>9} {:>10}",
                r.label,
                pct(first_auc(&r.val)),
                acc,
                pct(r.test.as_ref().and_then(first_auc)),
                r.parameters
            );
        }
        out
    }
}

/// Trains the full model and the four single-removal variants with the same
/// seeds and data.
pub fn ablate(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    manifest: &DatasetManifest,
) -> Result<AblationTable> {
    if model_config.ablations != Ablations::default() {
        return Err(Error::Config(
            "ablation runs start from a configuration with every component enabled".into(),
        ));
    }
    let val_set = manifest.split(Split::Val);
    let test_set = manifest.split(Split::Test);
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (label, ablations) in ABLATION_ROWS {
        log::info!("ablation: {label}");
        let config = model_config.clone().with_ablations(ablations);
        let run = train(&config, train_config, manifest)?;
        let model = &run.best_model;
        let val = evaluate(model, &val_set)?.report;
        let test = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(model, &test_set)?.report)
        };
        rows.push(AblationRow {
            label: label.to_string(),
            ablations,
            parameters: model.count_parameters().total,
            alpha: model.config().effective_alpha(),
            best_epoch: run.best_epoch,
            val_metric: primary_metric(model.config(), &val),
            val,
            test,
        });
    }
    Ok(AblationTable {
        seed: train_config.seed,
        rows,
    })
}
