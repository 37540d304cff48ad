use super::{LossConfig, LossError};
use crate::tensor::{ensure_same_shape, kernels, Graph, Tensor, Var};

/// `w = 1 + gain · |avgpool_k(G) − G|`: weights rise inside a band of
/// width k/2 around mask boundaries.
pub fn pixel_weight_map(gt: &Tensor, cfg: &LossConfig) -> Result<Tensor, LossError> {
    if let Some(&v) = gt.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(LossError::NonBinaryTarget(v));
    }
    if cfg.pool_k % 2 == 0 {
        return Err(LossError::InvalidConfig(format!(
            "pool_k must be odd, got {}",
            cfg.pool_k
        )));
    }
    let dims = gt.dims4("pixel_weight_map")?;
    let mut pooled = vec![0.0; gt.numel()];
    kernels::box_mean(dims, cfg.pool_k, gt.data(), &mut pooled);
    let data = pooled
        .iter()
        .zip(gt.data())
        .map(|(p, g)| 1.0 + cfg.weight_gain * (p - g).abs())
        .collect();
    Ok(Tensor::new(gt.shape(), data)?)
}

fn per_sample_sums(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    let per = t.numel() / n;
    // same summation as the graph's reductions, so matching terms cancel exactly
    Tensor::new(&[n], t.data().chunks(per).map(kernels::compensated_sum).collect())
        .expect("batch extent is positive")
}

/// Per image: −Σ w·(g·ln p + (1−g)·ln(1−p)) / Σ w with p clamped to
/// `[eps, 1 − eps]`; averaged over the batch. When `pred` is a sigmoid
/// node the logs are taken from its logits.
pub fn weighted_bce(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    weights: &Tensor,
    cfg: &LossConfig,
) -> Result<Var, LossError> {
    ensure_same_shape("weighted_bce", g.value(pred), gt)?;
    ensure_same_shape("weighted_bce", gt, weights)?;
    let (log_p, log_q) = match g.sigmoid_input(pred) {
        // Straight from the logits: ln(1 − σ(z)) = ln σ(−z) stays exact
        // where σ(z) has already rounded towards 1.
        Some(z) => {
            let bound = ((1.0 - cfg.eps) / cfg.eps).ln();
            let z = g.clamp(z, -bound, bound);
            let neg = g.mul_scalar(z, -1.0);
            (g.log_sigmoid(z), g.log_sigmoid(neg))
        }
        None => {
            let p = g.clamp(pred, cfg.eps, 1.0 - cfg.eps);
            let neg = g.mul_scalar(p, -1.0);
            let q = g.add_scalar(neg, 1.0);
            (g.ln(p), g.ln(q))
        }
    };

    let target = g.constant(gt.clone());
    let background = g.constant(Tensor::from_fn(gt.shape(), |i| 1.0 - gt.data()[i]));
    let fg = g.mul(target, log_p)?;
    let bg = g.mul(background, log_q)?;
    let ll = g.add(fg, bg)?;
    let w = g.constant(weights.clone());
    let weighted = g.mul(w, ll)?;
    let num = g.sum_per_sample(weighted);
    let den = g.constant(per_sample_sums(weights));
    let ratio = g.div(num, den)?;
    let mean = g.mean(ratio);
    Ok(g.mul_scalar(mean, -1.0))
}

/// Per image: 1 − (Σ w·p·g + 1) / (Σ w·(p + g − p·g) + 1); averaged over
/// the batch.
pub fn weighted_iou(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    weights: &Tensor,
) -> Result<Var, LossError> {
    ensure_same_shape("weighted_iou", g.value(pred), gt)?;
    ensure_same_shape("weighted_iou", gt, weights)?;
    let w = g.constant(weights.clone());
    let wp = g.mul(w, pred)?;
    let target = g.constant(gt.clone());
    let wpg = g.mul(wp, target)?;
    let inter = g.sum_per_sample(wpg);
    let sum_wp = g.sum_per_sample(wp);
    let wg = Tensor::from_fn(gt.shape(), |i| weights.data()[i] * gt.data()[i]);
    let sum_wg = g.constant(per_sample_sums(&wg));
    let both = g.add(sum_wp, sum_wg)?;
    let union = g.sub(both, inter)?;
    let num = g.add_scalar(inter, 1.0);
    let den = g.add_scalar(union, 1.0);
    let ratio = g.div(num, den)?;
    let mean = g.mean(ratio);
    let neg = g.mul_scalar(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}
