use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// How two adjacent-level features are fused inside a subtraction unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// `conv(|a − b|)`
    Subtract,
    /// `conv(a + b)`, the addition ablation.
    Add,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Subtract => "subtract",
            FusionMode::Add => "add",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subtract" | "sub" => Ok(FusionMode::Subtract),
            "add" => Ok(FusionMode::Add),
            other => Err(ModelError::InvalidConfig(format!(
                "fusion mode must be `subtract` or `add`, got `{other}`"
            ))),
        }
    }
}

/// Architectural hyperparameters. Everything needed to rebuild the
/// parameter layout lives here, and checkpoints embed it verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Square input side; five exact halvings require a multiple of 32.
    pub input_size: usize,
    /// Width every encoder level is reduced to before fusion.
    pub channels: usize,
    /// Number of subtraction-grid columns, 1 (plain FPN) to 5.
    pub depth: usize,
    pub fusion: FusionMode,
    pub lossnet_enabled: bool,
    pub seed: u64,
}

pub const LEVELS: usize = 5;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: 16,
            depth: 5,
            fusion: FusionMode::Subtract,
            lossnet_enabled: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "input_size must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        if self.channels == 0 {
            return Err(ModelError::InvalidConfig("channels must be positive".into()));
        }
        if !(1..=LEVELS).contains(&self.depth) {
            return Err(ModelError::InvalidConfig(format!(
                "depth must lie in 1..=5, got {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Output width of encoder stage `stage` (0-based): C·{1,1,2,2,4}, capped at 4C.
    pub fn encoder_width(&self, stage: usize) -> usize {
        const MULT: [usize; LEVELS] = [1, 1, 2, 2, 4];
        (self.channels * MULT[stage]).min(4 * self.channels)
    }

    /// Number of grid maps at this depth: Σᵢ min(d, 6 − i).
    pub fn grid_size(&self) -> usize {
        (1..=LEVELS).map(|i| self.depth.min(LEVELS + 1 - i)).sum()
    }

    /// Number of subtraction units evaluated at this depth.
    pub fn subtraction_units(&self) -> usize {
        self.grid_size() - LEVELS
    }
}
