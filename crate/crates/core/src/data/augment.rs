use rand::Rng;

use super::synth::SegmentationSample;
use crate::image::Map;
use crate::rng;
use crate::tensor::{Tensor, TensorError};

/// Per-batch scale choices for multi-scale training.
pub const SCALES: [f64; 3] = [0.75, 1.0, 1.25];

const MAX_ROTATION_DEG: f64 = 15.0;

pub fn flip_horizontal(sample: &SegmentationSample) -> SegmentationSample {
    let [c, h, w] = [sample.image.shape()[0], sample.image.shape()[1], sample.image.shape()[2]];
    let src = sample.image.data();
    let image = Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        src[i - x + (w - 1 - x)]
    });
    SegmentationSample {
        image,
        mask: sample.mask.flip_horizontal(),
        ..sample.clone()
    }
}

/// Rotates about the image centre with nearest-neighbour sampling. Mask
/// pixels mapped from outside the frame are background; image pixels
/// replicate the border.
pub fn rotate(sample: &SegmentationSample, degrees: f64) -> SegmentationSample {
    let [c, h, w] = [sample.image.shape()[0], sample.image.shape()[1], sample.image.shape()[2]];
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // source coordinates for every destination pixel
    let src: Vec<(isize, isize)> = (0..h * w)
        .map(|i| {
            let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
            let sy = cos * dy - sin * dx + cy;
            let sx = sin * dy + cos * dx + cx;
            (sy.round() as isize, sx.round() as isize)
        })
        .collect();
    let inside = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;

    let mask = Map::from_fn(h, w, |y, x| {
        let (sy, sx) = src[y * w + x];
        if inside(sy, sx) && sample.mask.get(sy as usize, sx as usize) >= 0.5 {
            1.0
        } else {
            0.0
        }
    });
    let data = sample.image.data();
    let image = Tensor::from_fn(&[c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        let (sy, sx) = src[p];
        let sy = sy.clamp(0, h as isize - 1) as usize;
        let sx = sx.clamp(0, w as isize - 1) as usize;
        data[ch * h * w + sy * w + sx]
    });
    SegmentationSample {
        image,
        mask,
        ..sample.clone()
    }
}

/// Flip with probability 0.5, then rotate by an angle in [−15°, 15°].
pub fn augment(sample: &SegmentationSample, r: &mut rng::Rng) -> SegmentationSample {
    let flipped = if r.gen_bool(0.5) {
        flip_horizontal(sample)
    } else {
        sample.clone()
    };
    let angle = r.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    rotate(&flipped, angle)
}

/// Nearest multiple of 32 (ties up), at least 32.
pub fn snap_to_32(side: f64) -> usize {
    let k = (side / 32.0 + 0.5).floor().max(1.0);
    k as usize * 32
}

fn plane_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(TensorError::InvalidShape {
            op,
            reason: format!("need at least two axes, got {s:?}"),
        });
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((t.numel() / (h * w), h, w))
}

fn out_shape(t: &Tensor, oh: usize, ow: usize) -> Vec<usize> {
    let mut s = t.shape().to_vec();
    let n = s.len();
    s[n - 2] = oh;
    s[n - 1] = ow;
    s
}

/// Half-pixel-centred bilinear resize of the last two axes.
pub fn resize_bilinear(t: &Tensor, oh: usize, ow: usize) -> Result<Tensor, TensorError> {
    let (planes, h, w) = plane_dims(t, "resize_bilinear")?;
    if (oh, ow) == (h, w) {
        return Ok(t.clone());
    }
    let axis = |o: usize, n: usize, len: usize| {
        let s = ((o as f64 + 0.5) * n as f64 / len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let ys: Vec<_> = (0..oh).map(|o| axis(o, h, oh)).collect();
    let xs: Vec<_> = (0..ow).map(|o| axis(o, w, ow)).collect();
    let d = t.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = d[base + y0 * w + x0] * (1.0 - fx) + d[base + y0 * w + x1] * fx;
                let bot = d[base + y1 * w + x0] * (1.0 - fx) + d[base + y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&out_shape(t, oh, ow), out)
}

/// Nearest-neighbour resize of the last two axes.
pub fn resize_nearest(t: &Tensor, oh: usize, ow: usize) -> Result<Tensor, TensorError> {
    let (planes, h, w) = plane_dims(t, "resize_nearest")?;
    if (oh, ow) == (h, w) {
        return Ok(t.clone());
    }
    let pick = |o: usize, n: usize, len: usize| (((o as f64 + 0.5) * n as f64 / len as f64) as usize).min(n - 1);
    let d = t.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for y in 0..oh {
            let sy = pick(y, h, oh);
            for x in 0..ow {
                out.push(d[p * h * w + sy * w + pick(x, w, ow)]);
            }
        }
    }
    Tensor::new(&out_shape(t, oh, ow), out)
}

/// Resizes a batch of images (bilinear) and masks (nearest) to the side
/// `snap_to_32(S · scale)`.
pub fn multiscale_resize(images: &Tensor, masks: &Tensor, scale: f64) -> Result<(Tensor, Tensor), TensorError> {
    let [_, _, h, w] = images.dims4("multiscale_resize")?;
    let (oh, ow) = (snap_to_32(h as f64 * scale), snap_to_32(w as f64 * scale));
    Ok((resize_bilinear(images, oh, ow)?, resize_nearest(masks, oh, ow)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collate, generate_sample, Difficulty};

    fn sample() -> SegmentationSample {
        generate_sample(11, 32, Difficulty::Medium).unwrap()
    }

    #[test]
    fn flips_and_zero_rotation() {
        let s = sample();
        let f = flip_horizontal(&s);
        assert_ne!(f.image, s.image);
        assert_eq!(flip_horizontal(&f), s);
        assert_eq!(f.image.data()[31], s.image.data()[0]);
        assert_eq!(rotate(&s, 0.0), s);
    }

    #[test]
    fn rotation_keeps_mask_binary_and_correspondence() {
        let s = sample();
        let mut r = rng::seeded(1, 0);
        for _ in 0..20 {
            let a = augment(&s, &mut r);
            assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert_eq!(a.image.shape(), s.image.shape());
        }
        // quarter turn moves the top-left corner to the top-right
        let mut m = Map::zeros(32, 32);
        m.data_mut()[0] = 1.0;
        let corner = SegmentationSample { mask: m, ..s.clone() };
        let rot = rotate(&corner, 90.0);
        assert_eq!(rot.mask.get(0, 31), 1.0);
        assert_eq!(rot.mask.mean(), 1.0 / 1024.0);
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_to_32(48.0), 64);
        assert_eq!(snap_to_32(80.0), 96);
        assert_eq!(snap_to_32(64.0), 64);
        assert_eq!(snap_to_32(47.9), 32);
        assert_eq!(snap_to_32(10.0), 32);
        for s in [32usize, 64, 96, 128] {
            for scale in SCALES {
                assert_eq!(snap_to_32(s as f64 * scale) % 32, 0);
            }
        }
    }

    #[test]
    fn multiscale_batches() {
        let s = sample();
        let (imgs, masks) = collate(&[s.clone(), s]).unwrap();
        let (i1, m1) = multiscale_resize(&imgs, &masks, 1.0).unwrap();
        assert_eq!((&i1, &m1), (&imgs, &masks));
        let (i2, m2) = multiscale_resize(&imgs, &masks, 1.25).unwrap();
        assert_eq!(i2.shape(), &[2, 3, 32, 32]);
        let (i3, m3) = multiscale_resize(&imgs, &masks, 2.0).unwrap();
        assert_eq!(i3.shape(), &[2, 3, 64, 64]);
        assert_eq!(m3.shape(), &[2, 1, 64, 64]);
        assert!(m3.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(i3.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(m2, masks);
        // constant planes stay constant
        let flat = Tensor::full(&[1, 1, 4, 4], 0.3);
        let up = resize_bilinear(&flat, 8, 8).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }
}
