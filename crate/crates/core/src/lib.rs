pub mod config;
pub mod data;
mod fsutil;
pub mod gradsuite;
pub mod harness;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use fsutil::write_atomic;
