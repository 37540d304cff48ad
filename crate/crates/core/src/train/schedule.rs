/// Linear warm-up to `max` over `warmup` steps, then linear decay to zero
/// at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub total: usize,
    pub warmup: usize,
}

impl LrSchedule {
    /// `warmup = round(fraction · total)`, kept inside `1..total`.
    pub fn new(total: usize, warmup_fraction: f64) -> Self {
        let total = total.max(2);
        let warmup = ((warmup_fraction * total as f64).round() as usize).clamp(1, total - 1);
        Self { total, warmup }
    }

    /// Rate at step `t` (1-based; `t = 0` gives 0).
    pub fn lr(&self, max: f64, t: usize) -> f64 {
        let (t, tw, tt) = (t.min(self.total) as f64, self.warmup as f64, self.total as f64);
        if t <= tw {
            max * t / tw
        } else {
            max * (tt - t) / (tt - tw)
        }
    }
}
