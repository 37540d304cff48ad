use super::LossError;
use crate::model::he_uniform;
use crate::rng;
use crate::tensor::{Graph, Tensor, TensorError, Var};

pub const LOSSNET_LEVELS: usize = 4;
pub const LOSSNET_WIDTHS: [usize; LOSSNET_LEVELS] = [8, 16, 32, 64];

/// Frozen feature extractor: four conv3×3→relu→maxpool2 stages with
/// seeded random weights. It is only ever bound as constants, so no
/// gradient accumulates into it; gradients pass through to its input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNet {
    params: Vec<Tensor>,
}

impl LossNet {
    pub fn new(seed: u64) -> Self {
        let mut shapes = Vec::with_capacity(2 * LOSSNET_LEVELS);
        let mut cin = 1;
        for &w in &LOSSNET_WIDTHS {
            shapes.push(vec![w, cin, 3, 3]);
            shapes.push(vec![w]);
            cin = w;
        }
        let mut r = rng::seeded(seed, 0x4c4f_5353);
        Self {
            params: he_uniform(&shapes, &mut r),
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Stage outputs for an N×1×H×W map; level i is at H/2^i.
    pub fn features(&self, g: &mut Graph, map: Var) -> Result<Vec<Var>, LossError> {
        let [_, c, h, w] = g.value(map).dims4("lossnet")?;
        if c != 1 || h % 16 != 0 || w % 16 != 0 {
            return Err(TensorError::InvalidShape {
                op: "lossnet",
                reason: format!(
                    "expected a single-channel map with sides divisible by 16, got {:?}",
                    g.shape(map)
                ),
            }
            .into());
        }
        let mut x = map;
        let mut out = Vec::with_capacity(LOSSNET_LEVELS);
        for stage in self.params.chunks(2) {
            let w = g.constant(stage[0].clone());
            let b = g.constant(stage[1].clone());
            let y = g.conv2d(x, w, b, 1, 1)?;
            let y = g.relu(y);
            x = g.maxpool2(y)?;
            out.push(x);
        }
        Ok(out)
    }
}

/// Σ over the four levels of ‖F_P − F_G‖₂ (root-sum-square per image),
/// averaged over the batch.
pub fn feature_loss(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    net: &LossNet,
) -> Result<Var, LossError> {
    let target = g.constant(gt.clone());
    feature_distance(g, pred, target, net)
}

pub(crate) fn feature_distance(
    g: &mut Graph,
    a: Var,
    b: Var,
    net: &LossNet,
) -> Result<Var, LossError> {
    crate::tensor::ensure_same_shape("feature_loss", g.value(a), g.value(b))?;
    let fa = net.features(g, a)?;
    let fb = net.features(g, b)?;
    let mut acc: Option<Var> = None;
    for (&x, &y) in fa.iter().zip(&fb) {
        let d = g.sub(x, y)?;
        let sq = g.square(d);
        let ss = g.sum_per_sample(sq);
        let norm = g.sqrt_eps(ss, 1e-12);
        acc = Some(match acc {
            Some(prev) => g.add(prev, norm)?,
            None => norm,
        });
    }
    let per_image = acc.expect("four levels");
    Ok(g.mean(per_image))
}
