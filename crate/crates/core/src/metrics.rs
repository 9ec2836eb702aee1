//! Accuracy, ROC-AUC and macro-F1.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney rank statistic. Tied
/// scores share their average rank, which gives ties half credit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are doubled so tie averages stay integral.
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank2 = (i + 1 + j) as u64;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        pos_rank_sum2 += avg_rank2 * pos_in_group;
        i = j;
    }
    let n_pos = n_pos as u64;
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Unweighted mean of per-class F1 over classes `0..k`. A class absent from
/// both predictions and truth scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(Error::Input("macro-F1 needs at least one class".into()));
    }
    if let Some(&c) = pred.iter().chain(truth).find(|&&c| c >= k) {
        return Err(Error::Input(format!("class {c} outside 0..{k}")));
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let total: f64 = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / k as f64)
}

/// Mean over labels of the positive-class F1 of each label column. A label
/// that is never predicted nor present scores 0.
pub fn multilabel_macro_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let k = truth.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::Input("multi-label macro-F1 needs at least one label".into()));
    }
    if pred.iter().chain(truth).any(|r| r.len() != k) {
        return Err(Error::Shape("ragged multi-label rows".into()));
    }
    let total: f64 = (0..k)
        .map(|j| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (p, t) in pred.iter().zip(truth) {
                match (p[j], t[j]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / k as f64)
}

/// Fraction of exact matches; for multi-label rows this is the exact-match
/// ratio.
pub fn accuracy<L: PartialEq>(pred: &[L], truth: &[L]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero samples".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    /// Present for binary tasks whose evaluated split contains both classes.
    pub auc: Option<f64>,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: BTreeMap<String, TaskMetrics>,
    pub n_samples: usize,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::UndefinedMetric("report over zero samples".into()));
        }
        for (name, m) in &self.tasks {
            let values = [Some(m.accuracy), m.auc, Some(m.macro_f1)];
            if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::UndefinedMetric(format!("{name}: value outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fixed-width table, one row per task.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>9} {:>7} {:>9}", "task", "accuracy", "AUC", "macro-F1");
        let _ = writeln!(out, "{}", "-".repeat(44));
        for (name, m) in &self.tasks {
            let auc = m.auc.map_or_else(|| "-".to_string(), |a| format!("{:.1}", a * 100.0));
            let _ = writeln!(
                out,
                "{:<16} {:>9.3} {:>7} {:>9.3}",
                name, m.accuracy, auc, m.macro_f1
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(44));
        let _ = writeln!(out, "samples: {}", self.n_samples);
        out
    }

    /// `key=value` lines with keys `<task>.<metric>`, plus `n_samples` and
    /// `provenance.<key>`.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_samples={}", self.n_samples);
        for (name, m) in &self.tasks {
            let _ = writeln!(out, "{name}.accuracy={}", m.accuracy);
            if let Some(auc) = m.auc {
                let _ = writeln!(out, "{name}.auc={auc}");
            }
            let _ = writeln!(out, "{name}.macro_f1={}", m.macro_f1);
        }
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "provenance.{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_trivial_cases() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn macro_f1_hand_cases() {
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap(), 1.0);
        // pred all 0, truth half 1: class 0 has tp=2, fp=2 → F1 = 4/6; class 1 → 0.
        let f = macro_f1(&[0, 0, 0, 0], &[0, 1, 0, 1], 2).unwrap();
        assert!((f - (2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        // absent class 2 counts as zero
        assert!((macro_f1(&[0, 1], &[0, 1], 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn multilabel_f1() {
        let t = vec![vec![true, false], vec![true, true], vec![false, false]];
        assert_eq!(multilabel_macro_f1(&t, &t).unwrap(), 1.0);
        // label 0: tp=1 fn=1 -> 2/3; label 1: tp=0 fp=1 fn=1 -> 0
        let p = vec![vec![true, true], vec![false, false], vec![false, false]];
        assert!((multilabel_macro_f1(&p, &t).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[vec![1, 0], vec![0, 1]], &[vec![1, 0], vec![1, 1]]).unwrap(), 0.5);
        assert!(accuracy::<u8>(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn report_renders() {
        let report = MetricsReport {
            tasks: [(
                "hateful".to_string(),
                TaskMetrics {
                    accuracy: 0.75,
                    auc: Some(0.801),
                    macro_f1: 0.7,
                },
            )]
            .into(),
            n_samples: 4,
            provenance: [("seed".to_string(), "0".to_string())].into(),
        };
        report.validate().unwrap();
        assert!(report.to_table().contains("80.1"));
        let kv = report.to_key_values();
        assert!(kv.contains("hateful.auc=0.801"));
        assert!(kv.contains("provenance.seed=0"));
    }
}
