//! Little-endian binary checkpoints.
//!
//! ```text
//! magic        8 bytes  "MSNETCKP"
//! version      u32      1
//! input_size   u32
//! channels     u32
//! depth        u32
//! fusion       u8       0 = subtract, 1 = add
//! lossnet      u8       0 / 1
//! seed         u64
//! count        u32      number of tensors
//! per tensor:  rank u32, rank × extent u32, numel × f64
//! ```
//!
//! Tensors follow the order documented in [`super::params`].

use std::fs;
use std::path::Path;

use super::config::{FusionMode, ModelConfig};
use super::network::Model;
use super::ModelError;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSNETCKP";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.input_size, cfg.channels, cfg.depth] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match cfg.fusion {
        FusionMode::Subtract => 0,
        FusionMode::Add => 1,
    });
    out.push(cfg.lossnet_enabled as u8);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for t in model.params() {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Checkpoint {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn error(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Checkpoint {
            offset: self.pos,
            reason: reason.into(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(ModelError::Checkpoint {
            offset: 0,
            reason: "bad magic, not an msnet checkpoint".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let input_size = r.u32("input_size")? as usize;
    let channels = r.u32("channels")? as usize;
    let depth = r.u32("depth")? as usize;
    let fusion = match r.u8("fusion")? {
        0 => FusionMode::Subtract,
        1 => FusionMode::Add,
        other => return Err(r.error(format!("unknown fusion code {other}"))),
    };
    let lossnet_enabled = match r.u8("lossnet flag")? {
        0 => false,
        1 => true,
        other => return Err(r.error(format!("invalid boolean {other}"))),
    };
    let seed = r.u64("seed")?;
    let config = ModelConfig {
        input_size,
        channels,
        depth,
        fusion,
        lossnet_enabled,
        seed,
    };
    config
        .validate()
        .map_err(|e| r.error(format!("invalid config block: {e}")))?;

    let count = r.u32("tensor count")? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(r.error(format!("tensor {i}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(r.error(format!("tensor {i}: empty shape {shape:?}")));
        }
        let raw = r.take(numel * 8, "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(&shape, data).map_err(|e| r.error(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Model::from_params(config, params)
}

/// Writes atomically (temp file + rename).
pub fn save(model: &Model, path: &Path) -> Result<(), ModelError> {
    crate::fsutil::write_atomic(path, &encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
