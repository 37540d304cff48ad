use super::{check_pair, MetricError};
use crate::image::Map;

const SIGMA: f64 = 5.0;
const WINDOW: usize = 7;

/// Exact Euclidean distance from every pixel to the nearest foreground
/// pixel of `mask`, with the row-major index of that pixel. Ties go to the
/// smaller column, then the smaller row. Returns `None` for an empty mask.
pub fn distance_transform(mask: &Map) -> Option<(Vec<f64>, Vec<usize>)> {
    let (h, w) = (mask.height(), mask.width());
    // per column: vertical offset and row of the nearest foreground pixel
    let mut col_dist = vec![usize::MAX; h * w];
    let mut col_row = vec![0usize; h * w];
    let mut any = false;
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if mask.get(y, x) == 1.0 {
                last = Some(y);
                any = true;
            }
            if let Some(r) = last {
                col_dist[y * w + x] = y - r;
                col_row[y * w + x] = r;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if mask.get(y, x) == 1.0 {
                next = Some(y);
            }
            if let Some(r) = next {
                // strict: an equal distance keeps the upper row
                if r - y < col_dist[y * w + x] {
                    col_dist[y * w + x] = r - y;
                    col_row[y * w + x] = r;
                }
            }
        }
    }
    if !any {
        return None;
    }
    let mut dist = vec![0.0; h * w];
    let mut index = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = usize::MAX;
            for c in 0..w {
                let dy = col_dist[y * w + c];
                if dy == usize::MAX {
                    continue;
                }
                let d2 = dy * dy + x.abs_diff(c).pow(2);
                if d2 < best {
                    best = d2;
                    index[y * w + x] = col_row[y * w + c] * w + c;
                }
            }
            dist[y * w + x] = (best as f64).sqrt();
        }
    }
    Some((dist, index))
}

/// Normalised Gaussian taps of odd length `n`.
fn gaussian(n: usize, sigma: f64) -> Vec<f64> {
    let r = (n / 2) as f64;
    let mut k = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - r, x as f64 - r);
            k.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let max = k.iter().cloned().fold(0.0, f64::max);
    for v in &mut k {
        if *v < f64::EPSILON * max {
            *v = 0.0;
        }
    }
    let s: f64 = k.iter().sum();
    k.iter().map(|v| v / s).collect()
}

/// Same-size correlation with zero padding.
fn filter_same(src: &[f64], h: usize, w: usize, kernel: &[f64], n: usize) -> Vec<f64> {
    let r = (n / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..n as isize {
                let sy = y + ky - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..n as isize {
                    let sx = x + kx - r;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += kernel[(ky * n as isize + kx) as usize] * src[(sy * w as isize + sx) as usize];
                }
            }
            out[(y * w as isize + x) as usize] = acc;
        }
    }
    out
}

/// Weighted F-measure (β² = 1). Errors are spread by a 7×7, σ = 5
/// Gaussian over a nearest-foreground propagated error map, and background
/// errors are amplified by `2 − 0.5^(d/5)` with `d` the distance to the
/// object. The window shrinks to the largest odd size fitting the image.
///
/// An empty ground truth scores 1 for an all-zero prediction, else 0.
pub fn weighted_fmeasure(pred: &Map, gt: &Map) -> Result<f64, MetricError> {
    check_pair("weighted_fmeasure", pred, gt)?;
    let Some((dist, nearest)) = distance_transform(gt) else {
        return Ok(if pred.data().iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 });
    };
    let (h, w) = (gt.height(), gt.width());
    let g = gt.data();
    let err: Vec<f64> = pred.data().iter().zip(g).map(|(p, t)| (p - t).abs()).collect();
    let propagated: Vec<f64> = (0..err.len())
        .map(|i| if g[i] == 1.0 { err[i] } else { err[nearest[i]] })
        .collect();

    let mut n = WINDOW.min(h.min(w));
    if n % 2 == 0 {
        n -= 1;
    }
    let spread = filter_same(&propagated, h, w, &gaussian(n, SIGMA), n);

    let decay = 0.5f64.ln() / 5.0;
    let (mut fg, mut ew_fg, mut ew_bg) = (0.0, 0.0, 0.0);
    for i in 0..err.len() {
        if g[i] == 1.0 {
            fg += 1.0;
            ew_fg += err[i].min(spread[i]);
        } else {
            ew_bg += err[i] * (2.0 - (decay * dist[i]).exp());
        }
    }
    let eps = f64::EPSILON;
    let tp = fg - ew_fg;
    let recall = 1.0 - ew_fg / fg;
    let precision = tp / (eps + tp + ew_bg);
    Ok(2.0 * recall * precision / (eps + recall + precision))
}
