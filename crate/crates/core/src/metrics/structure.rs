use super::{check_pair, MetricError};
use crate::image::Map;

const ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// Mean and sample standard deviation of the selected values.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0, n);
    }
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt(), n)
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma, _) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_term(pred: &Map, gt: &Map) -> f64 {
    let pairs = || pred.data().iter().zip(gt.data());
    let fg = object_score(pairs().filter(|(_, &g)| g == 1.0).map(|(&p, _)| p));
    let bg = object_score(pairs().filter(|(_, &g)| g == 0.0).map(|(&p, _)| 1.0 - p));
    let u = gt.mean();
    u * fg + (1.0 - u) * bg
}

/// Structural similarity of one block, with the reference's degenerate
/// branches.
fn block_ssim(pred: &Map, gt: &Map, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let n = (rows.len() * cols.len()) as f64;
    let cells = || {
        let cols = cols.clone();
        rows.clone()
            .flat_map(move |y| cols.clone().map(move |x| (y, x)))
            .map(|(y, x)| (pred.get(y, x), gt.get(y, x)))
    };
    let (sx, sy) = cells().fold((0.0, 0.0), |(a, b), (p, g)| (a + p, b + g));
    let (x, y) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (p, g) in cells() {
        vx += (p - x) * (p - x);
        vy += (g - y) * (g - y);
        cxy += (p - x) * (g - y);
    }
    let d = n - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / d, vy / d, cxy / d);
    let alpha = 4.0 * x * y * cxy;
    let beta = (x * x + y * y) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_term(pred: &Map, gt: &Map) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let total: f64 = gt.data().iter().sum();
    // 1-based centroid, rounded half away from zero
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let g = gt.get(y, x);
            sx += g * (x + 1) as f64;
            sy += g * (y + 1) as f64;
        }
    }
    let cx = (sx / total).round() as usize;
    let cy = (sy / total).round() as usize;

    let area = (h * w) as f64;
    let quadrants = [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ];
    quadrants
        .into_iter()
        .filter(|(r, c)| !r.is_empty() && !c.is_empty())
        .map(|(r, c)| (r.len() * c.len()) as f64 / area * block_ssim(pred, gt, r, c))
        .sum()
}

/// Structure measure `α·S_object + (1 − α)·S_region` with α = 0.5,
/// clamped at 0. An all-background ground truth scores `1 − mean(pred)`,
/// an all-foreground one `mean(pred)`.
pub fn s_measure(pred: &Map, gt: &Map) -> Result<f64, MetricError> {
    check_pair("s_measure", pred, gt)?;
    let y = gt.mean();
    if y == 0.0 {
        return Ok(1.0 - pred.mean());
    }
    if y == 1.0 {
        return Ok(pred.mean());
    }
    let q = ALPHA * object_term(pred, gt) + (1.0 - ALPHA) * region_term(pred, gt);
    Ok(q.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob() -> Map {
        Map::from_fn(10, 12, |y, x| ((2..7).contains(&y) && (3..10).contains(&x)) as u8 as f64)
    }

    #[test]
    fn perfect_is_one() {
        let g = blob();
        assert!((s_measure(&g, &g).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_ground_truths() {
        let full = Map::filled(4, 4, 1.0);
        assert_eq!(s_measure(&Map::zeros(4, 4), &full).unwrap(), 0.0);
        assert!((s_measure(&Map::filled(4, 4, 0.3), &full).unwrap() - 0.3).abs() < 1e-15);
        assert!((s_measure(&Map::filled(4, 4, 0.3), &Map::zeros(4, 4)).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn inverted_scores_low() {
        let g = blob();
        let s = s_measure(&g.map(|v| 1.0 - v), &g).unwrap();
        assert!((0.0..0.1).contains(&s), "{s}");
    }

    #[test]
    fn sample_std_of_single_value_is_zero() {
        assert_eq!(mean_std([0.4].into_iter()), (0.4, 0.0, 1));
        let (m, s, n) = mean_std([1.0, 3.0].into_iter());
        assert_eq!((m, n), (2.0, 2));
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
