use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use msnet::config::{ConfigError, RunConfig};
use msnet::data::Split;
use msnet::harness::{self, GradScope, HarnessError, Result};

#[derive(Parser)]
#[command(name = "msnet", version, about = "Multi-scale subtraction network for binary segmentation")]
struct Cli {
    /// `key = value` run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the run output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into data_dir.
    GenData {
        /// Number of samples (overrides n_samples).
        #[arg(long)]
        n: Option<usize>,
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train on the train split, validating on val.
    Train,
    /// Score a checkpoint on a split, or a directory of predictions.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        threshold: Option<f64>,
        /// Score the ground truth against itself.
        #[arg(long)]
        gt_as_pred: bool,
        /// Score existing prediction PGMs instead of running a model.
        #[arg(long, requires = "gt_dir")]
        pred_dir: Option<PathBuf>,
        #[arg(long, requires = "pred_dir")]
        gt_dir: Option<PathBuf>,
    },
    /// Write probability maps and masks for PPM images.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Destination directory (default: <out>/predictions).
        #[arg(long)]
        dest: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "ops")]
        scope: GradScope,
        #[arg(long, default_value_t = harness::GRAD_TRIALS)]
        trials: usize,
    },
    /// Train and score the ablation configurations.
    Ablate,
    /// Forward-pass latency of a checkpoint (or a fresh model).
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = harness::BENCH_MIN_ITERS)]
        iters: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::BadValue { key: kv.clone(), reason: "expected KEY=VALUE".into() })?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData { n, force } => {
            if let Some(n) = n {
                cfg.n_samples = n;
            }
            let s = harness::gen_data(&cfg, force)?;
            println!("wrote {} train, {} val, {} test samples to {}", s.train, s.val, s.test, cfg.data_dir.display());
        }
        Command::Train => {
            let out = harness::train_run(&cfg, |e| println!("{e}"))?;
            match out.best_val_dice {
                Some(d) => println!("best val mDice {d:.6} at epoch {}", out.best_epoch),
                None => println!("no validation split; kept final weights"),
            }
            println!("checkpoints in {}", cfg.out_dir.display());
        }
        Command::Eval { checkpoint, split, threshold, gt_as_pred, pred_dir, gt_dir } => {
            let t = threshold.unwrap_or(cfg.threshold);
            let report = match (pred_dir, gt_dir) {
                (Some(p), Some(g)) => harness::eval_dirs(&p, &g, t, &cfg.out_dir)?,
                _ => harness::eval_split(&cfg, checkpoint.as_deref(), split, t, gt_as_pred)?,
            };
            print!("{}", report.to_table());
            println!("metrics.csv and metrics.txt in {}", cfg.out_dir.display());
        }
        Command::Predict { checkpoint, dest, threshold, images } => {
            let ckpt = checkpoint.unwrap_or_else(|| harness::default_checkpoint(&cfg));
            let dest = dest.unwrap_or_else(|| cfg.out_dir.join("predictions"));
            let written = harness::predict_files(&cfg, &ckpt, &images, &dest, threshold.unwrap_or(cfg.threshold))?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck { scope, trials } => {
            let results = harness::gradcheck(scope, cfg.seed, trials)?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(HarnessError::Gradcheck(failed.join(", ")));
            }
        }
        Command::Ablate => {
            let rows = harness::ablate(&cfg, |label, e| println!("[{label}] {e}"))?;
            print!("{}", harness::ablation_table(&rows));
        }
        Command::Bench { checkpoint, iters } => {
            let model = match checkpoint {
                Some(p) => harness::load_checked(&cfg, &p)?,
                None => msnet::model::Model::new(cfg.model())?,
            };
            println!("{}", harness::bench(&model, iters)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
