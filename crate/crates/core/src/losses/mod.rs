//! Training objective: boundary-weighted BCE, boundary-weighted IoU and a
//! frozen-network feature loss.
//!
//! Every loss is reduced per image first and then averaged over the batch.

mod lossnet;
mod pixel;

pub use lossnet::{feature_loss, LossNet, LOSSNET_LEVELS, LOSSNET_WIDTHS};
pub use pixel::{pixel_weight_map, weighted_bce, weighted_iou};

use thiserror::Error;

use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("ground truth must be binary, found value {0}")]
    NonBinaryTarget(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub weight_gain: f64,
    /// Odd window of the boundary-weight pooling.
    pub pool_k: usize,
    pub lossnet_seed: u64,
    pub lossnet_levels: usize,
    /// Probabilities are clamped to `[eps, 1 − eps]` before logs.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_input(64)
    }
}

impl LossConfig {
    /// Defaults with the pooling window scaled from 31 px at a 352 px input.
    pub fn for_input(input_size: usize) -> Self {
        Self {
            weight_gain: 5.0,
            pool_k: pool_window_for(input_size),
            lossnet_seed: 0x105_5e7,
            lossnet_levels: LOSSNET_LEVELS,
            eps: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.pool_k < 3 || self.pool_k % 2 == 0 {
            return Err(LossError::InvalidConfig(format!(
                "pool_k must be odd and at least 3, got {}",
                self.pool_k
            )));
        }
        if self.lossnet_levels != LOSSNET_LEVELS {
            return Err(LossError::InvalidConfig(format!(
                "lossnet_levels is fixed at {LOSSNET_LEVELS}, got {}",
                self.lossnet_levels
            )));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(LossError::InvalidConfig(format!(
                "eps must lie in (0, 0.5), got {}",
                self.eps
            )));
        }
        if !(self.weight_gain >= 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "weight_gain must be non-negative, got {}",
                self.weight_gain
            )));
        }
        Ok(())
    }
}

/// Nearest odd integer to `31 · input / 352`, at least 3.
pub fn pool_window_for(input_size: usize) -> usize {
    let target = 31.0 * input_size as f64 / 352.0;
    let k = 2.0 * ((target - 1.0) / 2.0).round() + 1.0;
    (k.max(3.0)) as usize
}

/// Graph handles for each term of the total loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub wbce: Var,
    pub wiou: Var,
    pub feature: Option<Var>,
}

/// Scalar values of each term, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub wbce: f64,
    pub wiou: f64,
    pub feature: f64,
}

impl LossTerms {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total).item(),
            wbce: g.value(self.wbce).item(),
            wiou: g.value(self.wiou).item(),
            feature: self.feature.map_or(0.0, |v| g.value(v).item()),
        }
    }
}

/// L = L_wiou + L_wbce (+ L_f when a LossNet is supplied).
pub fn total_loss(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    lossnet: Option<&LossNet>,
    cfg: &LossConfig,
) -> Result<LossTerms, LossError> {
    let weights = pixel_weight_map(gt, cfg)?;
    let wbce = weighted_bce(g, pred, gt, &weights, cfg)?;
    let wiou = weighted_iou(g, pred, gt, &weights)?;
    let mut total = g.add(wiou, wbce)?;
    let feature = match lossnet {
        Some(net) => {
            let lf = feature_loss(g, pred, gt, net)?;
            total = g.add(total, lf)?;
            Some(lf)
        }
        None => None,
    };
    Ok(LossTerms {
        total,
        wbce,
        wiou,
        feature,
    })
}
