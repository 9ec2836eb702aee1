//! Task loss plus weighted caption loss.
//!
//! Binary and multi-label heads use binary cross-entropy, multi-class heads
//! categorical cross-entropy; per-head losses are summed into the task term.
//! The caption term is the mean categorical cross-entropy over non-PAD
//! target positions. `total = task + alpha * caption`.

use serde::{Deserialize, Serialize};

use super::{HeadKind, HeadScores, HeadSpec, ModelConfig};
use crate::autodiff::{Tape, Var};
use crate::dataset::{EmbeddedSample, LabelValue, PAD};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub task: f64,
    pub caption: f64,
    pub total: f64,
}

impl LossParts {
    pub fn new(task: f64, caption: f64, alpha: f64) -> Self {
        Self {
            task,
            caption,
            total: task + alpha * caption,
        }
    }
}

pub(crate) struct LossVars {
    pub task: Var,
    pub caption: Option<Var>,
    pub total: Var,
}

impl LossVars {
    /// Reads the parts off the tape; `total` is the value of the node that
    /// gets differentiated.
    pub fn parts<T: Scalar>(&self, tape: &Tape<'_, T>) -> LossParts {
        LossParts {
            task: tape.value(self.task).item().as_f64(),
            caption: self.caption.map_or(0.0, |c| tape.value(c).item().as_f64()),
            total: tape.value(self.total).item().as_f64(),
        }
    }
}

enum Target<T> {
    Sigmoid(Vec<T>),
    Softmax(usize),
}

fn head_target<T: Scalar>(head: &HeadSpec, label: Option<&LabelValue>) -> Result<Target<T>> {
    let missing = || Error::Input(format!("no label for head `{}`", head.name));
    let label = label.ok_or_else(missing)?;
    let bad = |what: &str| {
        Err(Error::Input(format!(
            "label {label:?} is not a valid {what} for head `{}`",
            head.name
        )))
    };
    match (&head.kind, label) {
        (HeadKind::Binary, LabelValue::Index(v)) if *v <= 1 => Ok(Target::Sigmoid(vec![T::lit(*v as f64)])),
        (HeadKind::Binary, _) => bad("binary label"),
        (HeadKind::Multiclass { classes }, LabelValue::Index(v)) if (*v as usize) < *classes => {
            Ok(Target::Softmax(*v as usize))
        }
        (HeadKind::Multiclass { .. }, _) => bad("class index"),
        (HeadKind::Multilabel { classes }, LabelValue::MultiHot(bits))
            if bits.len() == *classes && bits.iter().all(|&b| b <= 1) =>
        {
            Ok(Target::Sigmoid(bits.iter().map(|&b| T::lit(b as f64)).collect()))
        }
        (HeadKind::Multilabel { .. }, _) => bad("multi-hot vector"),
    }
}

fn task_graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    heads: &[HeadSpec],
    logits: &[Var],
    labels: &std::collections::BTreeMap<String, LabelValue>,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (head, &z) in heads.iter().zip(logits) {
        let term = match head_target::<T>(head, labels.get(&head.name))? {
            Target::Sigmoid(t) => tape.bce_with_logits(z, &t),
            Target::Softmax(c) => tape.softmax_cross_entropy(z, &[Some(c)]),
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("no classification heads".into()))
}

/// Targets are the caption shifted left by one; PAD targets are ignored.
fn caption_targets(caption_ids: &[u32]) -> Vec<Option<usize>> {
    caption_ids[1..]
        .iter()
        .map(|&id| (id != PAD).then_some(id as usize))
        .collect()
}

pub(crate) fn loss_graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    config: &ModelConfig,
    head_logits: &[Var],
    caption_logits: Option<Var>,
    sample: &EmbeddedSample,
) -> Result<LossVars> {
    let task = task_graph(tape, &config.heads, head_logits, &sample.labels)?;
    let alpha = config.effective_alpha();
    let caption = caption_logits.map(|z| {
        let targets = caption_targets(&sample.caption_ids);
        tape.softmax_cross_entropy(z, &targets)
    });
    let total = match caption {
        Some(c) if alpha != 0.0 => {
            let weighted = tape.scale(c, T::lit(alpha));
            tape.add(task, weighted)
        }
        _ => task,
    };
    Ok(LossVars {
        task,
        caption,
        total,
    })
}

/// Loss of already computed scores. `caption_logits` holds one row per
/// target position, i.e. `caption_ids.len() - 1` rows.
pub fn combined_loss<T: Scalar>(
    heads: &[HeadSpec],
    head_scores: &HeadScores<T>,
    labels: &std::collections::BTreeMap<String, LabelValue>,
    caption_logits: Option<&Matrix<T>>,
    caption_ids: &[u32],
    alpha: f64,
) -> Result<LossParts> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    let no_params: [Matrix<T>; 0] = [];
    let mut tape = Tape::new(&no_params);
    let mut logits = Vec::with_capacity(heads.len());
    for h in heads {
        let score = head_scores
            .get(&h.name)
            .ok_or_else(|| Error::Input(format!("no scores for head `{}`", h.name)))?;
        if score.logits.len() != h.kind.units() {
            return Err(Error::Shape(format!(
                "head `{}` has {} logits, expected {}",
                h.name,
                score.logits.len(),
                h.kind.units()
            )));
        }
        logits.push(tape.leaf(Matrix::row_vector(&score.logits)));
    }
    let task = task_graph(&mut tape, heads, &logits, labels)?;
    let task = tape.value(task).item().as_f64();
    let caption = match caption_logits {
        None => 0.0,
        Some(z) => {
            if caption_ids.len() != z.rows() + 1 {
                return Err(Error::Shape(format!(
                    "{} caption logit rows for {} caption ids",
                    z.rows(),
                    caption_ids.len()
                )));
            }
            let v = tape.leaf(z.clone());
            let c = tape.softmax_cross_entropy(v, &caption_targets(caption_ids));
            tape.value(c).item().as_f64()
        }
    };
    Ok(LossParts::new(task, caption, alpha))
}
