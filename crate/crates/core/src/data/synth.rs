use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::DataError;
use crate::image::Map;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Difficulty {
    #[default]
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    /// Mean intensity shift of the foreground.
    pub fn contrast(self) -> f64 {
        match self {
            Self::Easy => 0.4,
            Self::Medium => 0.2,
            Self::Hard => 0.1,
        }
    }

    pub fn noise_sigma(self) -> f64 {
        match self {
            Self::Easy => 0.02,
            Self::Medium => 0.05,
            Self::Hard => 0.08,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            other => Err(format!("unknown difficulty {other:?} (easy, medium, hard)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub id: String,
    /// 3×S×S, values in [0, 1].
    pub image: Tensor,
    /// S×S, values in {0, 1}.
    pub mask: Map,
    /// Number of blobs drawn (they may touch).
    pub blobs: usize,
}

/// Stacks samples into N×3×S×S images and N×1×S×S masks.
pub fn collate(samples: &[SegmentationSample]) -> Result<(Tensor, Tensor), DataError> {
    let mut images = Vec::with_capacity(samples.len());
    let mut masks = Vec::with_capacity(samples.len());
    for s in samples {
        let mut shape = vec![1];
        shape.extend_from_slice(s.image.shape());
        images.push(s.image.clone().reshape(&shape).map_err(|e| DataError::Invalid(e.to_string()))?);
        masks.push(s.mask.to_tensor().reshape(&[1, 1, s.mask.height(), s.mask.width()]).expect("same length"));
    }
    let images = Tensor::stack(&images).map_err(|e| DataError::Invalid(e.to_string()))?;
    let masks = Tensor::stack(&masks).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok((images, masks))
}

const MIN_FRACTION: f64 = 0.01;
const MAX_FRACTION: f64 = 0.6;

struct Blob {
    cx: f64,
    cy: f64,
    r: f64,
    waves: [(f64, f64, f64, f64); 3],
}

impl Blob {
    fn random(r: &mut rng::Rng, s: f64) -> Self {
        let radius = s * r.gen_range(0.1..0.26);
        let margin = radius * 0.6;
        let mut waves = [(0.0, 0.0, 0.0, 0.0); 3];
        for w in &mut waves {
            let theta: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            let freq = r.gen_range(1.0..2.5);
            *w = (freq * theta.cos(), freq * theta.sin(), r.gen_range(0.0..std::f64::consts::TAU), r.gen_range(0.1..0.25));
        }
        Self {
            cx: r.gen_range(margin..s - margin),
            cy: r.gen_range(margin..s - margin),
            r: radius,
            waves,
        }
    }

    /// Positive inside: a radial bump plus low-frequency sinusoids.
    fn field(&self, y: f64, x: f64) -> f64 {
        let (u, v) = ((x - self.cx) / self.r, (y - self.cy) / self.r);
        let wobble: f64 = self.waves.iter().map(|&(a, b, p, amp)| amp * (a * u + b * v + p).sin()).sum();
        1.0 - (u * u + v * v) + wobble
    }
}

fn draw_mask(r: &mut rng::Rng, size: usize) -> (Map, usize) {
    loop {
        let count = r.gen_range(1..=3);
        let blobs: Vec<Blob> = (0..count).map(|_| Blob::random(r, size as f64)).collect();
        let mask = Map::from_fn(size, size, |y, x| {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            blobs.iter().any(|b| b.field(py, px) > 0.0) as u8 as f64
        });
        let frac = mask.mean();
        if (MIN_FRACTION..=MAX_FRACTION).contains(&frac) {
            return (mask, count);
        }
    }
}

/// Low-frequency texture in roughly [−1, 1].
fn texture(r: &mut rng::Rng, size: usize) -> Map {
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let theta: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            let freq = r.gen_range(1.0..4.0) * std::f64::consts::TAU / size as f64;
            (freq * theta.cos(), freq * theta.sin(), r.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    Map::from_fn(size, size, |y, x| {
        waves.iter().map(|&(a, b, p)| (a * x as f64 + b * y as f64 + p).sin()).sum::<f64>() / 4.0
    })
}

/// One deterministic sample: 1–3 blobs on a textured background, the
/// foreground shifted in colour by the difficulty's contrast, plus noise.
pub fn generate_sample(seed: u64, size: usize, difficulty: Difficulty) -> Result<SegmentationSample, DataError> {
    if size == 0 || size % 32 != 0 {
        return Err(DataError::InvalidSize(size));
    }
    let mut r = rng::seeded(seed, 0x5359_4e54);
    let (mask, blobs) = draw_mask(&mut r, size);
    let tex = texture(&mut r, size);

    let base: [f64; 3] = [r.gen_range(0.3..0.5), r.gen_range(0.25..0.45), r.gen_range(0.25..0.45)];
    let shift: [f64; 3] = std::array::from_fn(|_| difficulty.contrast() * r.gen_range(0.85..1.15));
    let tex_gain: [f64; 3] = std::array::from_fn(|_| r.gen_range(0.04..0.08));
    let noise = Normal::new(0.0, difficulty.noise_sigma()).expect("positive sigma");

    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        for i in 0..plane {
            let v = base[c] + tex_gain[c] * tex.data()[i] + shift[c] * mask.data()[i] + noise.sample(&mut r);
            data[c * plane + i] = v.clamp(0.0, 1.0);
        }
    }
    Ok(SegmentationSample {
        id: format!("{seed:016x}"),
        image: Tensor::new(&[3, size, size], data).expect("extents are positive"),
        mask,
        blobs,
    })
}
