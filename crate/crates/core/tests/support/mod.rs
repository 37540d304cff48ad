//! Direct, unoptimised transcriptions of the reference metric algorithms,
//! written against plain row-major slices so they share no code with the
//! library.

#![allow(dead_code)]

use msnet::image::Map;

pub const EPS: f64 = f64::EPSILON;

pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Grid {
    pub fn from_map(m: &Map) -> Self {
        Self { h: m.height(), w: m.width(), v: m.data().to_vec() }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.w + x]
    }
}

pub fn dice_count(pred: &[f64], gt: &[f64]) -> f64 {
    let inter = pred.iter().zip(gt).filter(|(&p, &g)| p == 1.0 && g == 1.0).count();
    let p = pred.iter().filter(|&&v| v == 1.0).count();
    let g = gt.iter().filter(|&&v| v == 1.0).count();
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

pub fn iou_count(pred: &[f64], gt: &[f64]) -> f64 {
    let inter = pred.iter().zip(gt).filter(|(&p, &g)| p == 1.0 && g == 1.0).count();
    let union = pred.iter().zip(gt).filter(|(&p, &g)| p == 1.0 || g == 1.0).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Nearest foreground pixel by exhaustive search; ties go to the pixel
/// that comes first in column-major order.
fn bwdist(gt: &Grid) -> (Vec<f64>, Vec<usize>) {
    let mut dist = vec![0.0; gt.h * gt.w];
    let mut idx = vec![0; gt.h * gt.w];
    for y in 0..gt.h {
        for x in 0..gt.w {
            let mut best: Option<(usize, usize, usize)> = None;
            for c in 0..gt.w {
                for r in 0..gt.h {
                    if gt.at(r, c) != 1.0 {
                        continue;
                    }
                    let d2 = y.abs_diff(r).pow(2) + x.abs_diff(c).pow(2);
                    if best.map_or(true, |(b, _, _)| d2 < b) {
                        best = Some((d2, r, c));
                    }
                }
            }
            let (d2, r, c) = best.expect("non-empty ground truth");
            dist[y * gt.w + x] = (d2 as f64).sqrt();
            idx[y * gt.w + x] = r * gt.w + c;
        }
    }
    (dist, idx)
}

/// `fspecial('gaussian', n, sigma)`.
fn fspecial(n: usize, sigma: f64) -> Vec<Vec<f64>> {
    let half = (n as f64 - 1.0) / 2.0;
    let mut k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (y, x) = (i as f64 - half, j as f64 - half);
                    (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        })
        .collect();
    let max = k.iter().flatten().cloned().fold(0.0, f64::max);
    let mut total = 0.0;
    for row in &mut k {
        for v in row.iter_mut() {
            if *v < EPS * max {
                *v = 0.0;
            }
            total += *v;
        }
    }
    for row in &mut k {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    k
}

/// `imfilter(a, k)`: correlation, zero padding, same size.
fn imfilter(a: &Grid, k: &[Vec<f64>]) -> Vec<f64> {
    let n = k.len() as isize;
    let c = n / 2;
    let mut out = vec![0.0; a.h * a.w];
    for y in 0..a.h as isize {
        for x in 0..a.w as isize {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let (yy, xx) = (y + i - c, x + j - c);
                    if yy >= 0 && xx >= 0 && yy < a.h as isize && xx < a.w as isize {
                        s += k[i as usize][j as usize] * a.at(yy as usize, xx as usize);
                    }
                }
            }
            out[(y * a.w as isize + x) as usize] = s;
        }
    }
    out
}

/// Weighted F-measure with β² = 1, 7×7 σ = 5 Gaussian.
pub fn wfb(fg: &Grid, gt: &Grid) -> f64 {
    let n = gt.v.len();
    if gt.v.iter().all(|&g| g == 0.0) {
        return if fg.v.iter().all(|&p| p == 0.0) { 1.0 } else { 0.0 };
    }
    let is_gt = |i: usize| gt.v[i] == 1.0;
    let e: Vec<f64> = (0..n).map(|i| (fg.v[i] - gt.v[i]).abs()).collect();
    let (dst, idxt) = bwdist(gt);
    let mut et = e.clone();
    for i in 0..n {
        if !is_gt(i) {
            et[i] = e[idxt[i]];
        }
    }
    let win = {
        let m = 7.min(gt.h).min(gt.w);
        if m % 2 == 0 { m - 1 } else { m }
    };
    let ea = imfilter(&Grid { h: gt.h, w: gt.w, v: et }, &fspecial(win, 5.0));
    let mut min_e_ea = e.clone();
    for i in 0..n {
        if is_gt(i) && ea[i] < e[i] {
            min_e_ea[i] = ea[i];
        }
    }
    let mut b = vec![1.0; n];
    for i in 0..n {
        if !is_gt(i) {
            b[i] = 2.0 - 1.0 * ((1.0f64 - 0.5).ln() / 5.0 * dst[i]).exp();
        }
    }
    let ew: Vec<f64> = (0..n).map(|i| min_e_ea[i] * b[i]).collect();
    let n_gt = (0..n).filter(|&i| is_gt(i)).count() as f64;
    let sum_ew_gt: f64 = (0..n).filter(|&i| is_gt(i)).map(|i| ew[i]).sum();
    let tpw = n_gt - sum_ew_gt;
    let fpw: f64 = (0..n).filter(|&i| !is_gt(i)).map(|i| ew[i]).sum();
    let r = 1.0 - sum_ew_gt / n_gt;
    let p = tpw / (EPS + tpw + fpw);
    let beta = 1.0;
    (1.0 + beta) * (r * p) / (EPS + r + beta * p)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std1(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(values: &[f64]) -> f64 {
    let x = mean(values);
    let sigma_x = std1(values);
    2.0 * x / (x * x + 1.0 + sigma_x + EPS)
}

fn s_object(pred: &Grid, gt: &Grid) -> f64 {
    let fg: Vec<f64> = (0..gt.v.len()).filter(|&i| gt.v[i] == 1.0).map(|i| pred.v[i]).collect();
    let bg: Vec<f64> = (0..gt.v.len()).filter(|&i| gt.v[i] != 1.0).map(|i| 1.0 - pred.v[i]).collect();
    let u = mean(&gt.v);
    u * object(&fg) + (1.0 - u) * object(&bg)
}

/// 1-based centroid (X = column, Y = row), MATLAB `round`.
fn centroid(gt: &Grid) -> (usize, usize) {
    let total: f64 = gt.v.iter().sum();
    let mut sx = 0.0;
    for i in 1..=gt.w {
        let col: f64 = (0..gt.h).map(|r| gt.at(r, i - 1)).sum();
        sx += col * i as f64;
    }
    let mut sy = 0.0;
    for j in 1..=gt.h {
        let row: f64 = (0..gt.w).map(|c| gt.at(j - 1, c)).sum();
        sy += row * j as f64;
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

/// `A(r0:r1, c0:c1)` with 1-based inclusive bounds.
fn block(a: &Grid, r0: usize, r1: usize, c0: usize, c1: usize) -> Grid {
    let mut v = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            v.push(a.at(r - 1, c - 1));
        }
    }
    Grid { h: r1 + 1 - r0, w: c1 + 1 - c0, v }
}

fn ssim(pred: &Grid, gt: &Grid) -> f64 {
    let n = pred.v.len() as f64;
    let x = mean(&pred.v);
    let y = mean(&gt.v);
    let sigma_x2 = pred.v.iter().map(|p| (p - x).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sigma_y2 = gt.v.iter().map(|g| (g - y).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sigma_xy = pred.v.iter().zip(&gt.v).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if alpha == 0.0 && beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &Grid, gt: &Grid) -> f64 {
    let (x, y) = centroid(gt);
    let (hei, wid) = (gt.h, gt.w);
    let area = (wid * hei) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = ((wid - x) * y) as f64 / area;
    let w3 = (x * (hei - y)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let parts = [
        (w1, 1, y, 1, x),
        (w2, 1, y, x + 1, wid),
        (w3, y + 1, hei, 1, x),
        (w4, y + 1, hei, x + 1, wid),
    ];
    let mut q = 0.0;
    for (w, r0, r1, c0, c1) in parts {
        // an empty quadrant carries zero weight
        if r0 > r1 || c0 > c1 {
            continue;
        }
        q += w * ssim(&block(pred, r0, r1, c0, c1), &block(gt, r0, r1, c0, c1));
    }
    q
}

pub fn structure_measure(pred: &Grid, gt: &Grid) -> f64 {
    let y = mean(&gt.v);
    if y == 0.0 {
        return 1.0 - mean(&pred.v);
    }
    if y == 1.0 {
        return mean(&pred.v);
    }
    let alpha = 0.5;
    let q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
    q.max(0.0)
}

/// Enhanced alignment of a binary foreground map, averaged over all pixels.
fn emeasure_binary(fm: &[f64], gt: &[f64]) -> f64 {
    let n = gt.len() as f64;
    let sum_gt: f64 = gt.iter().sum();
    let enhanced: Vec<f64> = if sum_gt == 0.0 {
        fm.iter().map(|f| 1.0 - f).collect()
    } else if sum_gt == n {
        fm.to_vec()
    } else {
        let (mf, mg) = (mean(fm), mean(gt));
        fm.iter()
            .zip(gt)
            .map(|(f, g)| {
                let (df, dg) = (f - mf, g - mg);
                let align = 2.0 * (dg * df) / (dg * dg + df * df + EPS);
                (align + 1.0).powi(2) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n
}

/// Max enhanced alignment over thresholds k/255, k = 0..=255.
pub fn max_emeasure(pred: &Grid, gt: &Grid) -> f64 {
    (0..=255)
        .map(|k| {
            let t = k as f64 / 255.0;
            let fm: Vec<f64> = pred.v.iter().map(|&p| if p >= t { 1.0 } else { 0.0 }).collect();
            emeasure_binary(&fm, &gt.v)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Splitmix-style hash to a unit float; fixtures depend only on it.
fn unit(seed: u64, i: u64) -> f64 {
    let mut z = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Twenty fixed 8×8 (prediction, ground truth) pairs: ellipses, bars,
/// scattered pixels and two degenerate ground truths, with predictions
/// ranging from near-perfect to noise.
pub fn fixtures() -> Vec<(Map, Map)> {
    let mut out = Vec::new();
    for f in 0..20u64 {
        let gt = match f {
            18 => Map::zeros(8, 8),
            19 => Map::filled(8, 8, 1.0),
            _ if f % 3 == 0 => {
                let (cy, cx) = (2.5 + 3.0 * unit(f, 1), 2.5 + 3.0 * unit(f, 2));
                let (ry, rx) = (1.2 + 2.0 * unit(f, 3), 1.2 + 2.0 * unit(f, 4));
                Map::from_fn(8, 8, |y, x| {
                    let d = ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2);
                    (d <= 1.0) as u8 as f64
                })
            }
            _ if f % 3 == 1 => {
                let (y0, x0) = ((unit(f, 1) * 4.0) as usize, (unit(f, 2) * 4.0) as usize);
                let (hh, ww) = (2 + (unit(f, 3) * 4.0) as usize, 1 + (unit(f, 4) * 3.0) as usize);
                Map::from_fn(8, 8, |y, x| ((y0..y0 + hh).contains(&y) && (x0..x0 + ww).contains(&x)) as u8 as f64)
            }
            _ => {
                let mut m = Map::from_fn(8, 8, |y, x| (unit(f, (y * 8 + x) as u64 + 10) < 0.3) as u8 as f64);
                m.data_mut()[27] = 1.0;
                m.data_mut()[0] = 0.0;
                m
            }
        };
        let noise = [0.05, 0.2, 0.45, 0.9][(f % 4) as usize];
        let pred = Map::from_fn(8, 8, |y, x| {
            let i = (y * 8 + x) as u64;
            let r = unit(f + 100, i);
            let v = gt.get(y, x) * (1.0 - noise) + noise * r;
            // a few exact level values exercise the threshold ties
            if unit(f + 200, i) < 0.1 {
                (v * 255.0).round() / 255.0
            } else {
                v.clamp(0.0, 1.0)
            }
        });
        out.push((pred, gt));
    }
    out
}
