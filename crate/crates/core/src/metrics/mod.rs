//! Segmentation metrics: Dice, IoU, MAE, weighted F-measure, S-measure
//! and max E-measure, plus dataset-level reporting.
//!
//! Ground truth is always a strictly binary map; predictions are real maps
//! in [0, 1] unless a function says it wants a binarized prediction.

mod alignment;
mod fmeasure;
mod report;
mod structure;

pub use alignment::{e_measure, e_measure_at, E_THRESHOLDS};
pub use fmeasure::{distance_transform, weighted_fmeasure};
pub use report::{evaluate_dataset, evaluate_maps, evaluate_pair, ImageRecord, MetricReport, Scores};
pub use structure::s_measure;

use thiserror::Error;

use crate::data::PnmError;
use crate::image::Map;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{metric}: shape mismatch, prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch {
        metric: &'static str,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("{metric}: expected a binary map, found value {value}")]
    NonBinary { metric: &'static str, value: f64 },
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("{name}: no counterpart in {dir}")]
    MissingCounterpart { name: String, dir: String },
    #[error("{name}: prediction {pred:?} and ground truth {gt:?} differ in size")]
    PairShape {
        name: String,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("no mask files to evaluate in {0}")]
    NoPairs(String),
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: PnmError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_pair(metric: &'static str, pred: &Map, gt: &Map) -> Result<(), MetricError> {
    if !pred.same_shape(gt) {
        return Err(MetricError::ShapeMismatch {
            metric,
            pred: (pred.height(), pred.width()),
            gt: (gt.height(), gt.width()),
        });
    }
    check_binary(metric, gt)
}

pub(crate) fn check_binary(metric: &'static str, m: &Map) -> Result<(), MetricError> {
    match m.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&value) => Err(MetricError::NonBinary { metric, value }),
        None => Ok(()),
    }
}

/// 1 where `pred ≥ threshold`, else 0.
pub fn binarize(pred: &Map, threshold: f64) -> Result<Map, MetricError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    Ok(pred.map(|v| if v >= threshold { 1.0 } else { 0.0 }))
}

fn overlap(metric: &'static str, pred: &Map, gt: &Map) -> Result<(usize, usize, usize), MetricError> {
    check_pair(metric, pred, gt)?;
    check_binary(metric, pred)?;
    let (mut p, mut g, mut both) = (0, 0, 0);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (a == 1.0, b == 1.0);
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    Ok((p, g, both))
}

/// 2|P∩G| / (|P| + |G|); 1 when both masks are empty.
pub fn dice(pred: &Map, gt: &Map) -> Result<f64, MetricError> {
    let (p, g, both) = overlap("dice", pred, gt)?;
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// |P∩G| / |P∪G|; 1 when both masks are empty.
pub fn iou(pred: &Map, gt: &Map) -> Result<f64, MetricError> {
    let (p, g, both) = overlap("iou", pred, gt)?;
    let union = p + g - both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / union as f64)
}

/// Mean absolute error on the continuous prediction.
pub fn mae(pred: &Map, gt: &Map) -> Result<f64, MetricError> {
    check_pair("mae", pred, gt)?;
    let total: f64 = pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g).abs()).sum();
    Ok(total / pred.len() as f64)
}
