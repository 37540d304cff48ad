use super::{check_pair, MetricError};
use crate::image::Map;

/// Number of thresholds `k / 255`, `k = 0..=255`, in the max sweep.
pub const E_THRESHOLDS: usize = 256;

/// Enhanced-alignment score for one (fm, gt) cell, given the means.
fn cell(fm: f64, gt: f64, mu_fm: f64, mu_gt: f64) -> f64 {
    let (a, b) = (fm - mu_fm, gt - mu_gt);
    let align = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
    (align + 1.0).powi(2) / 4.0
}

/// Score from the four cell counts of a binarized prediction.
/// `tp`: fm=1,gt=1; `fp`: fm=1,gt=0; `fg`: |gt|; `n`: pixel count.
fn score(tp: usize, fp: usize, fg: usize, n: usize) -> f64 {
    let pos = tp + fp;
    let nf = n as f64;
    let sum = if fg == 0 {
        (n - pos) as f64
    } else if fg == n {
        pos as f64
    } else {
        let (mu_fm, mu_gt) = (pos as f64 / nf, fg as f64 / nf);
        let fn_ = fg - tp;
        let tn = n - fg - fp;
        tp as f64 * cell(1.0, 1.0, mu_fm, mu_gt)
            + fp as f64 * cell(1.0, 0.0, mu_fm, mu_gt)
            + fn_ as f64 * cell(0.0, 1.0, mu_fm, mu_gt)
            + tn as f64 * cell(0.0, 0.0, mu_fm, mu_gt)
    };
    sum / nf
}

/// Enhanced-alignment score of `pred ≥ threshold` against `gt`.
pub fn e_measure_at(pred: &Map, gt: &Map, threshold: f64) -> Result<f64, MetricError> {
    check_pair("e_measure", pred, gt)?;
    let (mut tp, mut fp, mut fg) = (0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let on = p >= threshold;
        fg += (g == 1.0) as usize;
        tp += (on && g == 1.0) as usize;
        fp += (on && g == 0.0) as usize;
    }
    Ok(score(tp, fp, fg, pred.len()))
}

/// Largest `k` with `k / 255 ≤ p`, or `None` below the first threshold.
fn level(p: f64) -> Option<usize> {
    if !(p >= 0.0) {
        return None;
    }
    let mut k = ((p * 255.0).floor() as usize).min(E_THRESHOLDS - 1);
    while k + 1 < E_THRESHOLDS && (k + 1) as f64 / 255.0 <= p {
        k += 1;
    }
    while k > 0 && k as f64 / 255.0 > p {
        k -= 1;
    }
    (k as f64 / 255.0 <= p).then_some(k)
}

/// Maximum enhanced-alignment score over the thresholds `k / 255`.
/// Scores are normalised by the pixel count, so a perfect match is 1.
pub fn e_measure(pred: &Map, gt: &Map) -> Result<f64, MetricError> {
    check_pair("e_measure", pred, gt)?;
    let mut hist_fg = [0usize; E_THRESHOLDS];
    let mut hist_bg = [0usize; E_THRESHOLDS];
    let mut fg = 0;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        fg += (g == 1.0) as usize;
        if let Some(k) = level(p) {
            if g == 1.0 {
                hist_fg[k] += 1;
            } else {
                hist_bg[k] += 1;
            }
        }
    }
    // pixels at level ≥ k are on at threshold k
    let (mut tp, mut fp) = (0, 0);
    let mut best = f64::NEG_INFINITY;
    for k in (0..E_THRESHOLDS).rev() {
        tp += hist_fg[k];
        fp += hist_bg[k];
        best = best.max(score(tp, fp, fg, pred.len()));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_match_direct_comparison() {
        for i in 0..=2000 {
            let p = i as f64 / 2000.0;
            let direct = (0..E_THRESHOLDS).filter(|&k| p >= k as f64 / 255.0).max();
            assert_eq!(level(p), direct, "{p}");
        }
        for k in 0..E_THRESHOLDS {
            let t = k as f64 / 255.0;
            assert_eq!(level(t), Some(k));
        }
        assert_eq!(level(-0.1), None);
        assert_eq!(level(f64::NAN), None);
    }

    #[test]
    fn sweep_matches_single_thresholds() {
        let gt = Map::from_fn(6, 7, |y, x| ((y + 2 * x) % 5 < 2) as u8 as f64);
        let pred = Map::from_fn(6, 7, |y, x| ((y * 7 + x) * 37 % 101) as f64 / 100.0);
        let direct = (0..E_THRESHOLDS)
            .map(|k| e_measure_at(&pred, &gt, k as f64 / 255.0).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((e_measure(&pred, &gt).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate() {
        let gt = Map::from_fn(5, 5, |y, x| (y < 2 && x > 1) as u8 as f64);
        assert!((e_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-9);
        // threshold 0 turns every pixel on, matching an all-foreground gt
        let full = Map::filled(5, 5, 1.0);
        assert_eq!(e_measure(&Map::zeros(5, 5), &full).unwrap(), 1.0);
        assert_eq!(e_measure_at(&Map::zeros(5, 5), &full, 0.5).unwrap(), 0.0);
    }
}
