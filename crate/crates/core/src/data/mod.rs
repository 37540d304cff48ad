//! Synthetic polyp-like segmentation data, augmentation and PNM I/O.

mod augment;
mod dataset;
pub mod pnm;
mod synth;

pub use augment::{
    augment, flip_horizontal, multiscale_resize, resize_bilinear, resize_nearest, rotate, snap_to_32,
    SCALES,
};
pub use dataset::{generate_dataset, split_counts, Dataset, DatasetSummary, Split};
pub use pnm::PnmError;
pub use synth::{collate, generate_sample, Difficulty, SegmentationSample};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sample size must be a positive multiple of 32, got {0}")]
    InvalidSize(usize),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("output directory {} is not empty (use --force to overwrite)", .0.display())]
    NotEmpty(PathBuf),
    #[error("dataset not found: {0}")]
    Missing(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Pnm {
        path: PathBuf,
        #[source]
        source: PnmError,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
