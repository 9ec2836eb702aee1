//! Optimization loop, evaluation, hyperparameter grid and ablation harness.

mod ablation;
mod evaluate;
mod grid;
mod history;
mod optimizer;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, EmbeddedSample, Split};
use crate::error::{Error, Result};
use crate::model::{Gradients, LossParts, MemeFier, ModelConfig};
use crate::rng;
use crate::tensor::Matrix;

pub use ablation::{ablate, AblationRow, AblationTable, ABLATION_ROWS};
pub use evaluate::{evaluate, primary_metric, Evaluation};
pub use grid::{grid_search, reference_grid, GridOutcome, GridReport, GridStatus};
pub use history::{EpochRecord, History};
pub use optimizer::Adam;

const SHUFFLE_STREAM: u64 = 0x5348;
const DROPOUT_STREAM: u64 = 0x4452;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// The learning rate is divided by this factor after `lr_drop_at`.
    pub lr_drop_factor: f64,
    /// Last epoch (1-based) at the initial rate; `None` means half the
    /// epochs, rounded up.
    pub lr_drop_at: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Log a progress line every this many epochs (0 = never).
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 40,
            batch_size: 32,
            lr_drop_factor: 10.0,
            lr_drop_at: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            seed: 0,
            report_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return bad("lr_drop_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn drop_epoch(&self) -> usize {
        self.lr_drop_at.unwrap_or(self.epochs.div_ceil(2))
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.drop_epoch() {
            self.lr
        } else {
            self.lr / self.lr_drop_factor
        }
    }
}

pub struct TrainOutcome {
    pub final_model: MemeFier<f32>,
    /// Parameters from the epoch with the best validation metric.
    pub best_model: MemeFier<f32>,
    pub best_epoch: usize,
    pub history: History,
}

/// Trains a fresh model on the manifest's train split, validating on its
/// val split after every epoch.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    manifest: &DatasetManifest,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    let mut config = model_config.clone();
    config.fit_to(manifest);
    let mut model = MemeFier::<f32>::new(config)?;
    let train_set = manifest.split(Split::Train);
    let val_set = manifest.split(Split::Val);
    if train_set.is_empty() {
        return Err(Error::Input("train split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Input("val split is empty".into()));
    }

    let mut adam = Adam::new(model.params(), train_config);
    let mut history = History::default();
    let mut best: Option<(f64, usize, Vec<Matrix<f32>>)> = None;
    let seed = train_config.seed;

    for epoch in 1..=train_config.epochs {
        let lr = train_config.lr_at(epoch);
        let order = shuffled(train_set.len(), seed, epoch);
        let mut sums = LossParts::default();
        for (step, batch) in order.chunks(train_config.batch_size).enumerate() {
            let samples: Vec<&EmbeddedSample> = batch.iter().map(|&i| train_set[i]).collect();
            let (parts, grads) = batch_gradients(&model, &samples, seed, epoch, step)?;
            if !parts.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss at step {step}"),
                });
            }
            sums.task += parts.task * samples.len() as f64;
            sums.caption += parts.caption * samples.len() as f64;
            sums.total += parts.total * samples.len() as f64;
            adam.step(model.params_mut(), &grads, lr);
        }
        let n = train_set.len() as f64;
        let train_loss = LossParts {
            task: sums.task / n,
            caption: sums.caption / n,
            total: sums.total / n,
        };
        let val = evaluate(&model, &val_set)?;
        if !val.loss.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite validation loss".into(),
            });
        }
        let score = primary_metric(model.config(), &val.report);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.params().to_vec()));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train: train_loss,
            val: val.loss,
            val_metrics: val.report,
        };
        if train_config.report_every > 0 && epoch % train_config.report_every == 0 {
            log::info!("{}", record.summary());
        }
        history.epochs.push(record);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let mut best_model = model.clone();
    best_model.params_mut().clone_from_slice(&best_params);
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        history,
    })
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed, &[SHUFFLE_STREAM, epoch as u64]));
    order
}

/// Mean loss and mean gradient over a batch. Samples are processed in batch
/// order, so the summation order is fixed.
pub fn batch_gradients(
    model: &MemeFier<f32>,
    samples: &[&EmbeddedSample],
    seed: u64,
    epoch: usize,
    step: usize,
) -> Result<(LossParts, Vec<Matrix<f32>>)> {
    let mut acc: Vec<Matrix<f32>> = model
        .params()
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let mut sums = LossParts::default();
    for (pos, s) in samples.iter().enumerate() {
        let dropout = rng::seeded(seed, &[DROPOUT_STREAM, epoch as u64, step as u64, pos as u64]);
        let (parts, grads): (LossParts, Gradients<f32>) = model.loss_and_gradients(s, Some(dropout))?;
        sums.task += parts.task;
        sums.caption += parts.caption;
        sums.total += parts.total;
        for (a, g) in acc.iter_mut().zip(grads) {
            if let Some(g) = g {
                a.add_assign(&g);
            }
        }
    }
    let inv = 1.0 / samples.len() as f32;
    for a in &mut acc {
        a.scale_in_place(inv);
    }
    let n = samples.len() as f64;
    Ok((
        LossParts {
            task: sums.task / n,
            caption: sums.caption / n,
            total: sums.total / n,
        },
        acc,
    ))
}
