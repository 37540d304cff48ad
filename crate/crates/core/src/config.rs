//! Run configuration: every model, loss, optimiser and data setting, read
//! from `key = value` files with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::Difficulty;
use crate::losses::{pool_window_for, LossConfig};
use crate::model::{FusionMode, ModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub input_size: usize,
    pub channels: usize,
    pub depth: usize,
    pub fusion: FusionMode,
    pub lossnet_enabled: bool,
    pub weight_gain: f64,
    /// `None` derives the window from `input_size`.
    pub pool_k: Option<usize>,
    pub lossnet_seed: u64,
    pub lossnet_levels: usize,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_backbone_max: f64,
    pub lr_head_max: f64,
    pub warmup_fraction: f64,
    pub augment: bool,
    pub multiscale: bool,
    pub grad_clip: Option<f64>,
    pub threshold: f64,
    pub data_dir: PathBuf,
    pub n_samples: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub difficulty: Difficulty,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let l = LossConfig::default();
        let t = TrainConfig::default();
        Self {
            seed: 0,
            input_size: m.input_size,
            channels: m.channels,
            depth: m.depth,
            fusion: m.fusion,
            lossnet_enabled: m.lossnet_enabled,
            weight_gain: l.weight_gain,
            pool_k: None,
            lossnet_seed: l.lossnet_seed,
            lossnet_levels: l.lossnet_levels,
            eps: l.eps,
            epochs: t.epochs,
            batch_size: t.batch_size,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            lr_backbone_max: t.lr_backbone_max,
            lr_head_max: t.lr_head_max,
            warmup_fraction: t.warmup_fraction,
            augment: t.augment,
            multiscale: t.multiscale,
            grad_clip: t.grad_clip,
            threshold: t.threshold,
            data_dir: PathBuf::from("data"),
            n_samples: 100,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            difficulty: Difficulty::Easy,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        reason: format!("{value:?}: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("{value:?} is not a boolean"),
        }),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 30] = [
        "seed",
        "input_size",
        "channels",
        "depth",
        "fusion",
        "lossnet_enabled",
        "weight_gain",
        "pool_k",
        "lossnet_seed",
        "lossnet_levels",
        "eps",
        "epochs",
        "batch_size",
        "momentum",
        "weight_decay",
        "lr_backbone_max",
        "lr_head_max",
        "warmup_fraction",
        "augment",
        "multiscale",
        "grad_clip",
        "threshold",
        "data_dir",
        "n_samples",
        "train_ratio",
        "val_ratio",
        "test_ratio",
        "difficulty",
        "out_dir",
        "lossnet",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "input_size" => self.input_size = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "fusion" => self.fusion = parse(key, v)?,
            "lossnet_enabled" | "lossnet" => self.lossnet_enabled = parse_bool(key, v)?,
            "weight_gain" => self.weight_gain = parse(key, v)?,
            "pool_k" => self.pool_k = if v == "auto" { None } else { Some(parse(key, v)?) },
            "lossnet_seed" => self.lossnet_seed = parse(key, v)?,
            "lossnet_levels" => self.lossnet_levels = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "lr_backbone_max" => self.lr_backbone_max = parse(key, v)?,
            "lr_head_max" => self.lr_head_max = parse(key, v)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "multiscale" => self.multiscale = parse_bool(key, v)?,
            "grad_clip" => self.grad_clip = if v == "none" { None } else { Some(parse(key, v)?) },
            "threshold" => self.threshold = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "n_samples" => self.n_samples = parse(key, v)?,
            "train_ratio" => self.train_ratio = parse(key, v)?,
            "val_ratio" => self.val_ratio = parse(key, v)?,
            "test_ratio" => self.test_ratio = parse(key, v)?,
            "difficulty" => self.difficulty = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| ConfigError::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            self.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text, "<config>")?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }

    /// Every field as `key = value`; `from_text` of this string rebuilds
    /// an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pool = self.pool_k.map_or("auto".to_string(), |k| k.to_string());
        let clip = self.grad_clip.map_or("none".to_string(), |c| format!("{c:?}"));
        let rows: [(&str, String); 29] = [
            ("seed", self.seed.to_string()),
            ("input_size", self.input_size.to_string()),
            ("channels", self.channels.to_string()),
            ("depth", self.depth.to_string()),
            ("fusion", self.fusion.to_string()),
            ("lossnet_enabled", self.lossnet_enabled.to_string()),
            ("weight_gain", format!("{:?}", self.weight_gain)),
            ("pool_k", pool),
            ("lossnet_seed", self.lossnet_seed.to_string()),
            ("lossnet_levels", self.lossnet_levels.to_string()),
            ("eps", format!("{:?}", self.eps)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("momentum", format!("{:?}", self.momentum)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("lr_backbone_max", format!("{:?}", self.lr_backbone_max)),
            ("lr_head_max", format!("{:?}", self.lr_head_max)),
            ("warmup_fraction", format!("{:?}", self.warmup_fraction)),
            ("augment", self.augment.to_string()),
            ("multiscale", self.multiscale.to_string()),
            ("grad_clip", clip),
            ("threshold", format!("{:?}", self.threshold)),
            ("data_dir", self.data_dir.display().to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("train_ratio", format!("{:?}", self.train_ratio)),
            ("val_ratio", format!("{:?}", self.val_ratio)),
            ("test_ratio", format!("{:?}", self.test_ratio)),
            ("difficulty", self.difficulty.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        for (k, v) in rows {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            channels: self.channels,
            depth: self.depth,
            fusion: self.fusion,
            lossnet_enabled: self.lossnet_enabled,
            seed: self.seed,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            weight_gain: self.weight_gain,
            pool_k: self.pool_k.unwrap_or_else(|| pool_window_for(self.input_size)),
            lossnet_seed: self.lossnet_seed,
            lossnet_levels: self.lossnet_levels,
            eps: self.eps,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_backbone_max: self.lr_backbone_max,
            lr_head_max: self.lr_head_max,
            warmup_fraction: self.warmup_fraction,
            augment: self.augment,
            multiscale: self.multiscale,
            grad_clip: self.grad_clip,
            threshold: self.threshold,
            seed: self.seed,
        }
    }

    pub fn ratios(&self) -> [f64; 3] {
        [self.train_ratio, self.val_ratio, self.test_ratio]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.model().validate().map_err(|e| inv(&e))?;
        self.loss().validate().map_err(|e| inv(&e))?;
        self.train().validate().map_err(|e| inv(&e))?;
        crate::data::split_counts(self.n_samples, self.ratios()).map_err(|e| inv(&e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(c.loss().pool_k, 5);
        assert_eq!(c.train().lr_head_max, 0.05);
        let odd = RunConfig {
            weight_decay: 0.1 + 0.2,
            pool_k: Some(7),
            ..c
        };
        assert_eq!(RunConfig::from_text(&odd.to_text()).unwrap(), odd);
    }

    #[test]
    fn parsing_and_errors() {
        let c = RunConfig::from_text("# comment\n\nepochs = 3 # inline\nfusion=add\nlossnet = off\ndifficulty = hard\n").unwrap();
        assert_eq!((c.epochs, c.fusion, c.lossnet_enabled, c.difficulty), (3, FusionMode::Add, false, Difficulty::Hard));
        let e = RunConfig::from_text("epochs = 3\nnope = 1\n").unwrap_err();
        assert!(e.to_string().contains(":2:"), "{e}");
        assert!(RunConfig::from_text("epochs 3").is_err());
        assert!(RunConfig::from_text("epochs = -3").is_err());
        assert!(RunConfig::from_text("augment = maybe").is_err());
        let bad = RunConfig::from_text("warmup_fraction = 1.5").unwrap();
        assert!(bad.validate().is_err());
    }
}
