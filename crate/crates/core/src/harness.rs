//! The command layer behind the `msnet` binary: data generation, training,
//! evaluation, prediction, gradient checks, ablation and benchmarking.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::{self, pnm, resize_bilinear, DataError, Dataset, DatasetSummary, Split};
use crate::gradsuite::{self, SuiteResult};
use crate::image::Map;
use crate::metrics::{self, binarize, evaluate_maps, MetricError, MetricReport, Scores};
use crate::model::{checkpoint, Model, ModelConfig, ModelError};
use crate::tensor::{Tensor, TensorError};
use crate::train::{self, EpochLog, TrainError, TrainOutcome};
use crate::write_atomic;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("config/checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: pnm::PnmError,
    },
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Stable machine-parseable category printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Data(_) => "data",
            HarnessError::Model(_) => "model",
            HarnessError::Train(TrainError::NonFinite { .. }) => "nonfinite",
            HarnessError::Train(_) => "train",
            HarnessError::Metric(_) => "metric",
            HarnessError::Mismatch(_) => "mismatch",
            HarnessError::Input { .. } => "input",
            HarnessError::Gradcheck(_) => "gradcheck",
            HarnessError::Tensor(_) => "tensor",
            HarnessError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "data" => 3,
            "model" => 4,
            "train" => 5,
            "nonfinite" => 6,
            "metric" => 7,
            "mismatch" => 8,
            "input" => 9,
            "gradcheck" => 10,
            "tensor" => 11,
            _ => 12,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// SHA-256 of the canonical config text, as lowercase hex.
pub fn config_hash(cfg: &RunConfig) -> String {
    Sha256::digest(cfg.to_text().as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<DatasetSummary> {
    cfg.validate()?;
    Ok(data::generate_dataset(
        &cfg.data_dir,
        cfg.seed,
        cfg.n_samples,
        cfg.ratios(),
        cfg.input_size,
        cfg.difficulty,
        force,
    )?)
}

/// Trains on the dataset's train split, validating on val. Writes
/// `run.cfg`, `train.log`, `best.ckpt` and `final.ckpt` into `out_dir`.
pub fn train_run(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.data_dir)?;
    let train_set = ds.load_split(Split::Train)?;
    let val_set = ds.load_split(Split::Val)?;
    train_on(cfg, &train_set, &val_set, Some(&cfg.out_dir), &mut on_epoch)
}

fn train_on(
    cfg: &RunConfig,
    train_set: &[data::SegmentationSample],
    val_set: &[data::SegmentationSample],
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_file(&dir.join("run.cfg"), &cfg.to_text())?;
    }
    let mut log = String::new();
    let outcome = train::train(cfg.model(), cfg.loss(), &cfg.train(), train_set, val_set, out_dir, |e| {
        writeln!(log, "{e}").unwrap();
        on_epoch(e);
    })?;
    if let Some(dir) = out_dir {
        write_file(&dir.join("train.log"), &log)?;
    }
    Ok(outcome)
}

/// Loads a checkpoint and refuses it when its architecture differs from
/// the config's. The init seed is not part of the architecture.
pub fn load_checked(cfg: &RunConfig, path: &Path) -> Result<Model> {
    let model = checkpoint::load(path)?;
    let (a, b) = (model.config(), &cfg.model());
    let arch = |c: &ModelConfig| (c.input_size, c.channels, c.depth, c.fusion, c.lossnet_enabled);
    if arch(a) != arch(b) {
        return Err(HarnessError::Mismatch(format!(
            "{} holds input_size={} channels={} depth={} fusion={} lossnet={}, config asks for input_size={} channels={} depth={} fusion={} lossnet={}",
            path.display(),
            a.input_size, a.channels, a.depth, a.fusion, a.lossnet_enabled,
            b.input_size, b.channels, b.depth, b.fusion, b.lossnet_enabled,
        )));
    }
    Ok(model)
}

pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("best.ckpt")
}

/// Probability map of one full-size image: resized to the model input,
/// predicted, and resized back to the original extent.
pub fn predict_map(model: &Model, image: &Tensor) -> Result<Map> {
    let side = model.config().input_size;
    let (h, w) = match image.shape() {
        &[3, h, w] => (h, w),
        other => {
            return Err(TensorError::InvalidShape {
                op: "predict",
                reason: format!("expected a 3×H×W image, got {other:?}"),
            }
            .into())
        }
    };
    let x = if (h, w) == (side, side) { image.clone() } else { resize_bilinear(image, side, side)? };
    let prob = model.predict(&x.reshape(&[1, 3, side, side])?)?;
    let prob = if (h, w) == (side, side) {
        prob
    } else {
        resize_bilinear(&prob, h, w)?
    };
    Ok(Map::from_tensor(&prob)?.map(|p| p.clamp(0.0, 1.0)))
}

/// The map as stored on disk: 8-bit quantized.
fn quantize(map: &Map) -> Map {
    map.map(|p| (p.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Scores a split. With `gt_as_pred` the ground truth stands in for the
/// prediction (a pipeline sanity check that must score perfectly).
pub fn eval_split(
    cfg: &RunConfig,
    checkpoint_path: Option<&Path>,
    split: Split,
    threshold: f64,
    gt_as_pred: bool,
) -> Result<MetricReport> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.data_dir)?;
    let model = if gt_as_pred {
        None
    } else {
        let path = checkpoint_path.map_or_else(|| default_checkpoint(cfg), Path::to_path_buf);
        Some(load_checked(cfg, &path)?)
    };
    let mut items = Vec::new();
    for id in ds.ids(split) {
        let sample = ds.load(id)?;
        let pred = match &model {
            Some(m) => quantize(&predict_map(m, &sample.image)?),
            None => sample.mask.clone(),
        };
        items.push((id.to_string(), pred, sample.mask));
    }
    if items.is_empty() {
        return Err(DataError::Missing(format!("split {split} of {} is empty", cfg.data_dir.display())).into());
    }
    let report = evaluate_maps(items, threshold)?;
    report.write(&cfg.out_dir)?;
    Ok(report)
}

/// Scores prediction PGMs against ground-truth PGMs with matching names.
pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path, threshold: f64, out_dir: &Path) -> Result<MetricReport> {
    let report = metrics::evaluate_dataset(pred_dir, gt_dir, threshold)?;
    report.write(out_dir)?;
    Ok(report)
}

/// Writes `<id>_prob.pgm` and `<id>_mask.pgm` for every input; the id is
/// the input's file stem. Returns the written paths.
pub fn predict_files(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    inputs: &[PathBuf],
    out_dir: &Path,
    threshold: f64,
) -> Result<Vec<PathBuf>> {
    let model = load_checked(cfg, checkpoint_path)?;
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for input in inputs {
        let image = pnm::read_image(input).map_err(|source| HarnessError::Input {
            path: input.clone(),
            source,
        })?;
        let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let prob = quantize(&predict_map(&model, &image)?);
        let mask = binarize(&prob, threshold)?;
        let prob_path = out_dir.join(format!("{id}_prob.pgm"));
        let mask_path = out_dir.join(format!("{id}_mask.pgm"));
        pnm::write_gray(&prob_path, &prob).map_err(|source| HarnessError::Input {
            path: prob_path.clone(),
            source,
        })?;
        pnm::write_mask(&mask_path, &mask).map_err(|source| HarnessError::Input {
            path: mask_path.clone(),
            source,
        })?;
        written.push(prob_path);
        written.push(mask_path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    Ops,
    Model,
    Loss,
}

impl std::str::FromStr for GradScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ops" => Ok(GradScope::Ops),
            "model" => Ok(GradScope::Model),
            "loss" => Ok(GradScope::Loss),
            other => Err(format!("scope must be ops, model or loss, got `{other}`")),
        }
    }
}

pub const GRAD_TRIALS: usize = 100;
pub const GRAD_ENTRIES: usize = 50;

pub fn gradcheck(scope: GradScope, seed: u64, trials: usize) -> Result<Vec<SuiteResult>> {
    Ok(match scope {
        GradScope::Ops => gradsuite::ops_suite(seed, trials)?,
        GradScope::Loss => gradsuite::loss_suite(seed, trials, GRAD_ENTRIES)?,
        GradScope::Model => gradsuite::model_suite(seed, trials, GRAD_ENTRIES)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    pub config: RunConfig,
    pub hash: String,
    pub param_count: usize,
    pub scores: Scores,
}

/// Configurations in table order: plain decoder (d = 1), grids of depth
/// 2 to 5, the full model with the feature loss, and the full model with
/// addition in place of subtraction.
pub fn ablation_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    use crate::model::FusionMode::{Add, Subtract};
    let row = |depth, fusion, lossnet| RunConfig {
        depth,
        fusion,
        lossnet_enabled: lossnet,
        ..base.clone()
    };
    vec![
        ("d=1 baseline", row(1, Subtract, false)),
        ("d=2", row(2, Subtract, false)),
        ("d=3", row(3, Subtract, false)),
        ("d=4", row(4, Subtract, false)),
        ("d=5", row(5, Subtract, false)),
        ("d=5 +Lf", row(5, Subtract, true)),
        ("d=5 +Lf add", row(5, Add, true)),
    ]
}

/// Trains and scores (on the test split) every ablation configuration.
/// Each row's config is written to `<out>/ablate/<hash>.cfg`.
pub fn ablate(base: &RunConfig, mut progress: impl FnMut(&str, &EpochLog)) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let ds = Dataset::open(&base.data_dir)?;
    let train_set = ds.load_split(Split::Train)?;
    let val_set = ds.load_split(Split::Val)?;
    let test_set = ds.load_split(Split::Test)?;
    let dir = base.out_dir.join("ablate");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    for (label, cfg) in ablation_configs(base) {
        let hash = config_hash(&cfg);
        write_file(&dir.join(format!("{hash}.cfg")), &cfg.to_text())?;
        let outcome = train_on(&cfg, &train_set, &val_set, None, &mut |e| progress(label, e))?;
        let model = outcome.best_model;
        let mut items = Vec::new();
        for s in &test_set {
            items.push((s.id.clone(), quantize(&predict_map(&model, &s.image)?), s.mask.clone()));
        }
        let report = evaluate_maps(items, cfg.threshold)?;
        rows.push(AblationRow {
            label,
            hash,
            param_count: model.param_count(),
            scores: report.mean,
            config: cfg,
        });
    }
    write_file(&dir.join("ablation.txt"), &ablation_table(&rows))?;
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<12} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}  {}\n",
        "config", "params", "mDice", "mIoU", "Fwβ", "Sα", "Eφmax", "MAE", "hash"
    );
    for r in rows {
        let v = r.scores.values();
        writeln!(
            s,
            "{:<12} {:>8} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}  {}",
            r.label, r.param_count, v[0], v[1], v[2], v[3], v[4], v[5], &r.hash[..12]
        )
        .unwrap();
    }
    s
}

pub const BENCH_WARMUP: usize = 10;
pub const BENCH_MIN_ITERS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub input_size: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
    pub fps: f64,
}

impl BenchReport {
    pub fn from_samples(input_size: usize, samples_ms: Vec<f64>) -> Self {
        let n = samples_ms.len() as f64;
        let mean_ms = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms.iter().map(|t| (t - mean_ms).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median_ms = if sorted.len() % 2 == 0 { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] };
        Self {
            input_size,
            samples_ms,
            mean_ms,
            median_ms,
            std_ms: var.sqrt(),
            fps: 1000.0 / mean_ms,
        }
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "input {0}x{0} samples {1} mean {2:.3} ms median {3:.3} ms std {4:.3} ms fps {5:.2}",
            self.input_size,
            self.samples_ms.len(),
            self.mean_ms,
            self.median_ms,
            self.std_ms,
            self.fps
        )
    }
}

/// Single-image forward latency after `BENCH_WARMUP` untimed passes.
/// Fewer than `BENCH_MIN_ITERS` iterations are raised to that minimum.
pub fn bench(model: &Model, n_iters: usize) -> Result<BenchReport> {
    let side = model.config().input_size;
    let mut r = crate::rng::seeded(model.config().seed, 0x4245_4e43);
    let image = Tensor::from_fn(&[1, 3, side, side], |_| rand::Rng::gen::<f64>(&mut r));
    for _ in 0..BENCH_WARMUP {
        model.predict(&image)?;
    }
    let mut samples = Vec::with_capacity(n_iters.max(BENCH_MIN_ITERS));
    for _ in 0..n_iters.max(BENCH_MIN_ITERS) {
        let t = Instant::now();
        model.predict(&image)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchReport::from_samples(side, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        RunConfig {
            input_size: 32,
            channels: 4,
            n_samples: 10,
            epochs: 1,
            batch_size: 4,
            data_dir: dir.join("data"),
            out_dir: dir.join("run"),
            ..RunConfig::default()
        }
    }

    #[test]
    fn hash_tracks_config_text() {
        let a = RunConfig::default();
        let b = RunConfig { depth: 4, ..a.clone() };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn ablation_rows_in_order_with_parity() {
        let rows = ablation_configs(&RunConfig::default());
        assert_eq!(rows.len(), 7);
        let depths: Vec<usize> = rows.iter().map(|(_, c)| c.depth).collect();
        assert_eq!(depths, vec![1, 2, 3, 4, 5, 5, 5]);
        let count = |c: &RunConfig| Model::new(c.model()).unwrap().param_count();
        assert_eq!(count(&rows[5].1), count(&rows[6].1));
    }

    #[test]
    fn bench_statistics() {
        let r = BenchReport::from_samples(64, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.mean_ms, 2.5);
        assert_eq!(r.median_ms, 2.5);
        assert!((r.std_ms - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r.fps - 400.0).abs() < 1e-9);
    }

    #[test]
    fn pipeline_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let summary = gen_data(&cfg, false).unwrap();
        assert_eq!((summary.train, summary.val, summary.test), (8, 1, 1));
        let out = train_run(&cfg, |_| {}).unwrap();
        assert_eq!(out.log.len(), 1);
        for f in ["run.cfg", "train.log", "best.ckpt", "final.ckpt"] {
            assert!(cfg.out_dir.join(f).exists(), "{f}");
        }
        let sanity = eval_split(&cfg, None, Split::Test, 0.5, true).unwrap();
        assert_eq!(sanity.mean.dice, 1.0);
        assert_eq!(sanity.mean.mae, 0.0);
        let report = eval_split(&cfg, None, Split::Val, 0.5, false).unwrap();
        assert_eq!(report.len(), 1);
        assert!(cfg.out_dir.join("metrics.csv").exists());

        let other = RunConfig { depth: 3, ..cfg.clone() };
        let err = eval_split(&other, None, Split::Val, 0.5, false).unwrap_err();
        assert_eq!(err.category(), "mismatch");
    }
}
