//! Parameter layout and initialisation.
//!
//! All parameters live in one flat list whose order is fixed by
//! [`Layout::new`] and is also the checkpoint order:
//!
//! 1. encoder stages 1..5, each `conv_a.weight, conv_a.bias, conv_b.weight, conv_b.bias`
//! 2. channel reducers for levels 1..5
//! 3. subtraction units, column-major: for n = 1..d−1, for i = 1..5−n
//!    the unit producing MS^i_{n+1}
//! 4. complementarity-enhancement convs for levels 1..5
//! 5. decoder refinement convs for levels 1..4
//! 6. the 1×1 prediction head
//!
//! Every conv contributes its weight (Cout×Cin×k×k) followed by its bias (Cout).

use rand::Rng;

use super::config::{ModelConfig, LEVELS};
use crate::rng;
use crate::tensor::Tensor;

/// Positions of one conv's weight and bias in the flat parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSlot {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub encoder: Vec<[ConvSlot; 2]>,
    pub reducers: Vec<ConvSlot>,
    /// `subtraction[n - 1][i - 1]` produces MS^i_{n+1}.
    pub subtraction: Vec<Vec<ConvSlot>>,
    pub enhance: Vec<ConvSlot>,
    /// `decoder[i - 1]` refines level i (i = 1..4).
    pub decoder: Vec<ConvSlot>,
    pub head: ConvSlot,
    shapes: Vec<Vec<usize>>,
    /// Number of leading tensors belonging to the backbone group.
    backbone_len: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let c = config.channels;
        let mut shapes = Vec::new();
        let mut conv = |cin: usize, cout: usize, k: usize| {
            shapes.push(vec![cout, cin, k, k]);
            shapes.push(vec![cout]);
            ConvSlot {
                weight: shapes.len() - 2,
                bias: shapes.len() - 1,
            }
        };

        let mut encoder = Vec::with_capacity(LEVELS);
        let mut cin = 3;
        for stage in 0..LEVELS {
            let width = config.encoder_width(stage);
            encoder.push([conv(cin, width, 3), conv(width, width, 3)]);
            cin = width;
        }
        let backbone_len = 4 * LEVELS;

        let reducers = (0..LEVELS)
            .map(|stage| conv(config.encoder_width(stage), c, 3))
            .collect();
        let subtraction = (1..config.depth)
            .map(|n| (1..=LEVELS - n).map(|_| conv(c, c, 3)).collect())
            .collect();
        let enhance = (0..LEVELS).map(|_| conv(c, c, 3)).collect();
        let decoder = (0..LEVELS - 1).map(|_| conv(c, c, 3)).collect();
        let head = conv(c, 1, 1);

        Self {
            encoder,
            reducers,
            subtraction,
            enhance,
            decoder,
            head,
            shapes,
            backbone_len,
        }
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn group(&self, index: usize) -> ParamGroup {
        if index < self.backbone_len {
            ParamGroup::Backbone
        } else {
            ParamGroup::Head
        }
    }

    /// Biases are the rank-1 tensors.
    pub fn is_bias(&self, index: usize) -> bool {
        self.shapes[index].len() == 1
    }

    pub fn param_count(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// He-uniform weights (bound √(6 / fan_in)) and zero biases.
pub fn init_params(config: &ModelConfig, layout: &Layout) -> Vec<Tensor> {
    let mut rng = rng::seeded(config.seed, 0x4d53_4e45_5450);
    he_uniform(layout.shapes(), &mut rng)
}

pub fn he_uniform(shapes: &[Vec<usize>], rng: &mut rng::Rng) -> Vec<Tensor> {
    shapes
        .iter()
        .map(|shape| {
            if shape.len() == 1 {
                return Tensor::zeros(shape);
            }
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
        })
        .collect()
}
