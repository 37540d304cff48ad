use crate::model::{Layout, ParamGroup};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and decoupled weight decay. Decay is a
/// multiplicative shrink `p ← p·(1 − lr·wd)` and skips biases.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &[Tensor], momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// `grads[i]` belongs to `params[i]`; `lr` maps a group to its rate.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[&[f64]],
        layout: &Layout,
        lr: impl Fn(ParamGroup) -> f64,
    ) {
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let rate = lr(layout.group(i));
            let shrink = if layout.is_bias(i) {
                1.0
            } else {
                1.0 - rate * self.weight_decay
            };
            let v = &mut self.velocity[i];
            for ((w, vel), &gr) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vel = self.momentum * *vel + gr;
                *w = *w * shrink - rate * *vel;
            }
        }
    }
}
