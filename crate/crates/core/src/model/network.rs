//! Forward pass: encoder → channel reduction → subtraction grid →
//! complementarity enhancement → top-down decoder → sigmoid.

use super::config::{FusionMode, ModelConfig, LEVELS};
use super::params::{init_params, ConvSlot, Layout};
use super::ModelError;
use crate::tensor::{Graph, Tensor, Var};

/// Encoder levels E¹..E⁵; level i is at `input / 2^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

/// Triangular grid of fused features: `rows[i - 1][n - 1]` is MS^i_n.
#[derive(Debug, Clone, PartialEq)]
pub struct MsGrid {
    pub rows: Vec<Vec<Var>>,
}

impl MsGrid {
    pub fn row_lengths(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// A network configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Tensor>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }
}

impl Model {
    /// Builds a freshly initialised model from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = init_params(&config, &layout);
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (i, (p, shape)) in params.iter().zip(layout.shapes()).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(ModelError::ParamMismatch(format!(
                    "tensor {i}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    /// Records every parameter in `g`. Trainable bindings accumulate
    /// gradients; frozen ones are constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p)
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    fn conv_relu(
        &self,
        g: &mut Graph,
        vars: &[Var],
        slot: ConvSlot,
        x: Var,
    ) -> Result<Var, ModelError> {
        let y = g.conv2d(x, vars[slot.weight], vars[slot.bias], 1, 1)?;
        Ok(g.relu(y))
    }

    fn check_input(&self, g: &Graph, image: Var, exact: bool) -> Result<(), ModelError> {
        let [_, c, h, w] = g.value(image).dims4("encode")?;
        if c != 3 || h != w {
            return Err(ModelError::InputSize(format!(
                "expected N×3×S×S image, got {:?}",
                g.shape(image)
            )));
        }
        if exact && h != self.config.input_size {
            return Err(ModelError::InputSize(format!(
                "expected side {}, got {h}",
                self.config.input_size
            )));
        }
        if h % 32 != 0 {
            return Err(ModelError::InputSize(format!(
                "side must be a multiple of 32, got {h}"
            )));
        }
        Ok(())
    }

    /// Five stages of conv3×3→relu→conv3×3→relu→maxpool2.
    pub fn encode(
        &self,
        g: &mut Graph,
        vars: &[Var],
        image: Var,
    ) -> Result<FeaturePyramid, ModelError> {
        self.check_input(g, image, true)?;
        self.encode_any(g, vars, image)
    }

    fn encode_any(
        &self,
        g: &mut Graph,
        vars: &[Var],
        image: Var,
    ) -> Result<FeaturePyramid, ModelError> {
        let mut x = image;
        let mut levels = Vec::with_capacity(LEVELS);
        for stage in &self.layout.encoder {
            x = self.conv_relu(g, vars, stage[0], x)?;
            x = self.conv_relu(g, vars, stage[1], x)?;
            x = g.maxpool2(x)?;
            levels.push(x);
        }
        Ok(FeaturePyramid { levels })
    }

    /// Per-level conv3×3→relu down to `channels` maps.
    pub fn reduce_channels(
        &self,
        g: &mut Graph,
        vars: &[Var],
        pyramid: &FeaturePyramid,
    ) -> Result<FeaturePyramid, ModelError> {
        let levels = pyramid
            .levels
            .iter()
            .zip(&self.layout.reducers)
            .map(|(&x, &slot)| self.conv_relu(g, vars, slot, x))
            .collect::<Result<_, _>>()?;
        Ok(FeaturePyramid { levels })
    }

    /// conv3×3→relu of |Fa − Fb| (or Fa + Fb in add mode).
    pub fn subtraction_unit(
        &self,
        g: &mut Graph,
        vars: &[Var],
        slot: ConvSlot,
        fa: Var,
        fb: Var,
    ) -> Result<Var, ModelError> {
        let fused = match self.config.fusion {
            FusionMode::Subtract => g.sub_abs(fa, fb)?,
            FusionMode::Add => g.add(fa, fb)?,
        };
        self.conv_relu(g, vars, slot, fused)
    }

    /// MS^i_1 is the reduced level i; MS^i_{n+1} = SU(MS^i_n, up(MS^{i+1}_n))
    /// for every column n < depth with i + n ≤ 5.
    pub fn build_ms_grid(
        &self,
        g: &mut Graph,
        vars: &[Var],
        reduced: &FeaturePyramid,
    ) -> Result<MsGrid, ModelError> {
        let mut rows: Vec<Vec<Var>> = reduced.levels.iter().map(|&v| vec![v]).collect();
        for n in 1..self.config.depth {
            for i in 1..=LEVELS - n {
                let finer = rows[i - 1][n - 1];
                let coarser = g.upsample2(rows[i][n - 1])?;
                let slot = self.layout.subtraction[n - 1][i - 1];
                let ms = self.subtraction_unit(g, vars, slot, finer, coarser)?;
                rows[i - 1].push(ms);
            }
        }
        Ok(MsGrid { rows })
    }

    /// CE^i = conv3×3→relu(Σₙ MS^i_n).
    pub fn complementarity_enhance(
        &self,
        g: &mut Graph,
        vars: &[Var],
        grid: &MsGrid,
    ) -> Result<Vec<Var>, ModelError> {
        grid.rows
            .iter()
            .zip(&self.layout.enhance)
            .map(|(row, &slot)| {
                let mut acc = row[0];
                for &ms in &row[1..] {
                    acc = g.add(acc, ms)?;
                }
                self.conv_relu(g, vars, slot, acc)
            })
            .collect()
    }

    /// Top-down decoder returning full-resolution logits (N×1×S×S).
    pub fn decode(&self, g: &mut Graph, vars: &[Var], ce: &[Var]) -> Result<Var, ModelError> {
        if ce.len() != LEVELS {
            return Err(ModelError::InputSize(format!(
                "decoder expects {LEVELS} levels, got {}",
                ce.len()
            )));
        }
        let mut d = ce[LEVELS - 1];
        for i in (1..LEVELS).rev() {
            let up = g.upsample2(d)?;
            let merged = g.add(ce[i - 1], up)?;
            d = self.conv_relu(g, vars, self.layout.decoder[i - 1], merged)?;
        }
        let head = self.layout.head;
        let logits = g.conv2d(d, vars[head.weight], vars[head.bias], 1, 0)?;
        Ok(g.upsample2(logits)?)
    }

    /// Full pipeline on an input of exactly `input_size`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], image: Var) -> Result<Var, ModelError> {
        self.check_input(g, image, true)?;
        self.forward_scaled(g, vars, image)
    }

    /// Full pipeline on any square input whose side is a multiple of 32;
    /// used by multi-scale training.
    pub fn forward_scaled(
        &self,
        g: &mut Graph,
        vars: &[Var],
        image: Var,
    ) -> Result<Var, ModelError> {
        self.check_input(g, image, false)?;
        let pyramid = self.encode_any(g, vars, image)?;
        let reduced = self.reduce_channels(g, vars, &pyramid)?;
        let grid = self.build_ms_grid(g, vars, &reduced)?;
        let ce = self.complementarity_enhance(g, vars, &grid)?;
        let logits = self.decode(g, vars, &ce)?;
        Ok(g.sigmoid(logits))
    }

    /// Inference convenience: probabilities for an N×3×S×S image batch.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }
}
