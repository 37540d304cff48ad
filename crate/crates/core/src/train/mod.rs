//! Mini-batch training: augmentation, multi-scale batches, warm-up plus
//! linear-decay SGD and best-on-validation checkpointing.

mod schedule;
mod sgd;

pub use schedule::LrSchedule;
pub use sgd::Sgd;

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::data::{augment, collate, multiscale_resize, DataError, SegmentationSample, SCALES};
use crate::image::Map;
use crate::losses::{total_loss, LossBreakdown, LossConfig, LossError, LossNet};
use crate::metrics::{binarize, dice, MetricError};
use crate::model::{checkpoint, Model, ModelConfig, ModelError, ParamGroup};
use crate::rng;
use crate::tensor::{Graph, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFinite { iteration: usize, value: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training samples")]
    NoData,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_backbone_max: f64,
    pub lr_head_max: f64,
    pub warmup_fraction: f64,
    pub augment: bool,
    pub multiscale: bool,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Binarisation threshold for validation Dice.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_backbone_max: 0.005,
            lr_head_max: 0.05,
            warmup_fraction: 0.1,
            augment: true,
            multiscale: true,
            grad_clip: Some(1.0),
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction must lie in (0, 1), got {}", self.warmup_fraction));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_backbone_max > 0.0 && self.lr_head_max > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }
}

/// Factor that brings the global L2 norm of `grads` down to `clip`.
pub fn clip_factor(grads: &[&[f64]], clip: Option<f64>) -> f64 {
    let Some(clip) = clip else { return 1.0 };
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub epochs: usize,
    /// Batch-averaged loss terms over the epoch.
    pub loss: LossBreakdown,
    pub val_dice: Option<f64>,
    pub lr_head: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {}/{} loss {:.6} wbce {:.6} wiou {:.6} lf {:.6} lr {:.6}",
            self.epoch, self.epochs, self.loss.total, self.loss.wbce, self.loss.wiou, self.loss.feature, self.lr_head
        )?;
        match self.val_dice {
            Some(d) => write!(f, " val_mdice {d:.6}"),
            None => write!(f, " val_mdice -"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub final_model: Model,
    /// Weights from the epoch with the best validation Dice (the final
    /// weights when there is no validation set).
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
}

/// Mean Dice of binarized predictions, batching `batch` images at a time.
pub fn mean_dice(model: &Model, samples: &[SegmentationSample], threshold: f64, batch: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let (images, _) = collate(chunk)?;
        let probs = model.predict(&images)?;
        for (i, s) in chunk.iter().enumerate() {
            let p = Map::from_tensor(&probs.sample(i)?)?;
            total += dice(&binarize(&p, threshold)?, &s.mask)?;
        }
    }
    Ok(total / samples.len() as f64)
}

fn check_sizes(cfg: &ModelConfig, samples: &[SegmentationSample], which: &str) -> Result<(), TrainError> {
    for s in samples {
        if s.image.shape() != [3, cfg.input_size, cfg.input_size] {
            return Err(TrainError::InvalidConfig(format!(
                "{which} sample {} has shape {:?}, model expects 3x{size}x{size}",
                s.id,
                s.image.shape(),
                size = cfg.input_size
            )));
        }
    }
    Ok(())
}

/// Trains a fresh model. `on_epoch` sees each log line as it is produced;
/// when `out_dir` is given the best and final checkpoints are written there.
pub fn train(
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    cfg: &TrainConfig,
    train_set: &[SegmentationSample],
    val_set: &[SegmentationSample],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::NoData);
    }
    check_sizes(&model_cfg, train_set, "train")?;
    check_sizes(&model_cfg, val_set, "val")?;

    let mut model = Model::new(model_cfg)?;
    let layout = model.layout().clone();
    let lossnet = model_cfg.lossnet_enabled.then(|| LossNet::new(loss_cfg.lossnet_seed));
    let batches = train_set.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(cfg.epochs * batches, cfg.warmup_fraction);
    let mut opt = Sgd::new(model.params(), cfg.momentum, cfg.weight_decay);
    let mut r = rng::seeded(cfg.seed, 0x5452_4149_4e);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        let mut sum = LossBreakdown::default();
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<SegmentationSample> = idx
                .iter()
                .map(|&i| if cfg.augment { augment(&train_set[i], &mut r) } else { train_set[i].clone() })
                .collect();
            let (mut images, mut masks) = collate(&batch)?;
            if cfg.multiscale {
                let scale = SCALES[r.gen_range(0..SCALES.len())];
                (images, masks) = multiscale_resize(&images, &masks, scale)?;
            }

            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let x = g.constant(images);
            let pred = model.forward_scaled(&mut g, &vars, x)?;
            let terms = total_loss(&mut g, pred, &masks, lossnet.as_ref(), &loss_cfg)?;
            let b = terms.breakdown(&g);
            if !b.total.is_finite() {
                return Err(TrainError::NonFinite {
                    iteration: step,
                    value: b.total,
                });
            }
            g.backward(terms.total)?;

            step += 1;
            let lr_bb = schedule.lr(cfg.lr_backbone_max, step);
            let lr_head = schedule.lr(cfg.lr_head_max, step);
            let raw: Vec<&[f64]> = vars.iter().map(|&v| g.grad(v).expect("trainable leaf")).collect();
            let scale = clip_factor(&raw, cfg.grad_clip);
            let scaled: Vec<Vec<f64>>;
            let grads: Vec<&[f64]> = if scale < 1.0 {
                scaled = raw.iter().map(|gr| gr.iter().map(|v| v * scale).collect()).collect();
                scaled.iter().map(Vec::as_slice).collect()
            } else {
                raw
            };
            opt.step(model.params_mut(), &grads, &layout, |grp| match grp {
                ParamGroup::Backbone => lr_bb,
                ParamGroup::Head => lr_head,
            });

            sum.total += b.total;
            sum.wbce += b.wbce;
            sum.wiou += b.wiou;
            sum.feature += b.feature;
        }
        let n = batches as f64;
        let val_dice = if val_set.is_empty() {
            None
        } else {
            Some(mean_dice(&model, val_set, cfg.threshold, cfg.batch_size)?)
        };
        let entry = EpochLog {
            epoch,
            epochs: cfg.epochs,
            loss: LossBreakdown {
                total: sum.total / n,
                wbce: sum.wbce / n,
                wiou: sum.wiou / n,
                feature: sum.feature / n,
            },
            val_dice,
            lr_head: schedule.lr(cfg.lr_head_max, step),
        };
        on_epoch(&entry);
        log.push(entry);

        let score = val_dice.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(s, _, _)| score > *s || val_dice.is_none()) {
            best = Some((score, epoch, model.clone()));
            if let Some(dir) = out_dir {
                checkpoint::save(&model, &dir.join("best.ckpt"))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(&model, &dir.join("final.ckpt"))?;
    }
    let (score, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log,
        final_model: model,
        best_model,
        best_epoch,
        best_val_dice: score.is_finite().then_some(score),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, Difficulty};

    fn samples(n: usize, offset: u64) -> Vec<SegmentationSample> {
        (0..n).map(|i| generate_sample(offset + i as u64, 32, Difficulty::Easy).unwrap()).collect()
    }

    fn tiny() -> (ModelConfig, TrainConfig) {
        let m = ModelConfig {
            input_size: 32,
            channels: 4,
            depth: 2,
            ..Default::default()
        };
        let t = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        (m, t)
    }

    #[test]
    fn runs_and_is_deterministic() {
        let (m, t) = tiny();
        let tr = samples(4, 0);
        let va = samples(2, 100);
        let mut lines = Vec::new();
        let a = train(m, LossConfig::for_input(32), &t, &tr, &va, None, |l| lines.push(l.to_string())).unwrap();
        let b = train(m, LossConfig::for_input(32), &t, &tr, &va, None, |_| {}).unwrap();
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.log, b.log);
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("epoch 1/2 loss "), "{}", lines[0]);
        assert!(a.best_val_dice.is_some());
        assert_eq!(a.log[1].lr_head, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, t) = tiny();
        let cfg = LossConfig::for_input(32);
        assert!(matches!(train(m, cfg, &t, &[], &[], None, |_| {}), Err(TrainError::NoData)));
        let wrong = vec![generate_sample(1, 64, Difficulty::Easy).unwrap()];
        assert!(train(m, cfg, &t, &wrong, &[], None, |_| {}).is_err());
        let bad = TrainConfig { warmup_fraction: 1.0, ..t };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn non_finite_loss_reports_iteration() {
        let (m, t) = tiny();
        let t = TrainConfig {
            augment: false,
            multiscale: false,
            batch_size: 1,
            ..t
        };
        let mut tr = samples(3, 0);
        tr[2].image.data_mut()[5] = f64::NAN;
        let err = train(m, LossConfig::for_input(32), &t, &tr, &[], None, |_| {}).unwrap_err();
        let TrainError::NonFinite { iteration, .. } = err else {
            panic!("{err}");
        };
        assert!(iteration < 3);
    }
}
