use std::collections::BTreeMap;

use crate::dataset::{EmbeddedSample, LabelValue};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1, multilabel_macro_f1, roc_auc, MetricsReport, TaskMetrics};
use crate::model::{HeadKind, LossParts, MemeFier, ModelConfig};

pub struct Evaluation {
    /// Mean per-sample loss.
    pub loss: LossParts,
    pub report: MetricsReport,
}

enum Column {
    Binary { scores: Vec<f64>, truth: Vec<bool> },
    Multiclass { pred: Vec<usize>, truth: Vec<usize>, k: usize },
    Multilabel { pred: Vec<Vec<bool>>, truth: Vec<Vec<bool>> },
}

/// Inference over `samples` (no dropout), returning mean losses and
/// per-head metrics. Binary and multi-label decisions threshold at 0.5.
pub fn evaluate(model: &MemeFier<f32>, samples: &[&EmbeddedSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Input("cannot evaluate an empty split".into()));
    }
    let heads = &model.config().heads;
    let mut columns: Vec<Column> = heads
        .iter()
        .map(|h| match h.kind {
            HeadKind::Binary => Column::Binary {
                scores: Vec::new(),
                truth: Vec::new(),
            },
            HeadKind::Multiclass { classes } => Column::Multiclass {
                pred: Vec::new(),
                truth: Vec::new(),
                k: classes,
            },
            HeadKind::Multilabel { .. } => Column::Multilabel {
                pred: Vec::new(),
                truth: Vec::new(),
            },
        })
        .collect();
    let mut sums = LossParts::default();
    for s in samples {
        let (scores, parts) = model.score(s)?;
        sums.task += parts.task;
        sums.caption += parts.caption;
        sums.total += parts.total;
        for ((h, col), score) in heads.iter().zip(&mut columns).zip(scores.iter()) {
            let label = s.labels.get(&h.name).ok_or_else(|| Error::Record {
                id: s.id.clone(),
                reason: format!("no label for task `{}`", h.name),
            })?;
            match (col, label) {
                (Column::Binary { scores, truth }, LabelValue::Index(y)) => {
                    scores.push(score.probs[0] as f64);
                    truth.push(*y == 1);
                }
                (Column::Multiclass { pred, truth, .. }, LabelValue::Index(y)) => {
                    pred.push(argmax(&score.probs));
                    truth.push(*y as usize);
                }
                (Column::Multilabel { pred, truth }, LabelValue::MultiHot(y)) => {
                    pred.push(score.probs.iter().map(|&p| p >= 0.5).collect());
                    truth.push(y.iter().map(|&v| v == 1).collect());
                }
                _ => {
                    return Err(Error::Record {
                        id: s.id.clone(),
                        reason: format!("label for `{}` does not match its head kind", h.name),
                    })
                }
            }
        }
    }
    let mut tasks = BTreeMap::new();
    for (h, col) in heads.iter().zip(columns) {
        let m = match col {
            Column::Binary { scores, truth } => {
                let pred: Vec<bool> = scores.iter().map(|&p| p >= 0.5).collect();
                let as_idx = |v: &[bool]| v.iter().map(|&b| b as usize).collect::<Vec<_>>();
                TaskMetrics {
                    accuracy: accuracy(&pred, &truth)?,
                    auc: roc_auc(&scores, &truth).ok(),
                    macro_f1: macro_f1(&as_idx(&pred), &as_idx(&truth), 2)?,
                }
            }
            Column::Multiclass { pred, truth, k } => TaskMetrics {
                accuracy: accuracy(&pred, &truth)?,
                auc: None,
                macro_f1: macro_f1(&pred, &truth, k)?,
            },
            Column::Multilabel { pred, truth } => TaskMetrics {
                accuracy: accuracy(&pred, &truth)?,
                auc: None,
                macro_f1: multilabel_macro_f1(&pred, &truth)?,
            },
        };
        tasks.insert(h.name.clone(), m);
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        loss: LossParts {
            task: sums.task / n,
            caption: sums.caption / n,
            total: sums.total / n,
        },
        report: MetricsReport {
            tasks,
            n_samples: samples.len(),
            provenance: BTreeMap::new(),
        },
    })
}

fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Model-selection score: mean over heads of AUC for binary heads (macro-F1
/// when AUC is undefined on the split) and macro-F1 for the rest.
pub fn primary_metric(config: &ModelConfig, report: &MetricsReport) -> f64 {
    let values: Vec<f64> = config
        .heads
        .iter()
        .filter_map(|h| {
            let m = report.tasks.get(&h.name)?;
            Some(match h.kind {
                HeadKind::Binary => m.auc.unwrap_or(m.macro_f1),
                _ => m.macro_f1,
            })
        })
        .collect();
    if values.is_empty() {
        f64::NEG_INFINITY
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
