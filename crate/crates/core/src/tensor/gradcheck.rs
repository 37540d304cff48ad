//! Central-difference verification of analytic gradients.

use super::{Graph, Result, Tensor, TensorError, Var};

/// Smallest denominator used when forming relative errors, so entries
/// whose true gradient is ~0 are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Relative inconsistency under step halving above which a coordinate is
/// treated as straddling a kink.
const KINK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest relative error over the checked (non-excluded) entries.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Entries skipped because the function is not differentiable there.
    pub excluded: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `analytic[i]` against central differences of `eval` for every
/// `i` in `indices`. `eval(i, delta)` must return the scalar function value
/// with entry `i` shifted by `delta` (and `eval(_, 0.0)` the unshifted one).
pub fn check_entries(
    analytic: &[f64],
    indices: &[usize],
    mut eval: impl FnMut(usize, f64) -> Result<f64>,
    h: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    if !(h > 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "gradcheck",
            reason: format!("step h must be positive, got {h}"),
        });
    }
    let f0 = match indices.first() {
        Some(&i) => eval(i, 0.0)?,
        None => 0.0,
    };
    let roundoff = 64.0 * f64::EPSILON * f0.abs().max(1.0) / h;
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
        tol,
        passed: true,
    };
    for &i in indices {
        let fp = eval(i, h)?;
        let fm = eval(i, -h)?;
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let numeric = (fp - fm) / (2.0 * h);
        let scale = forward.abs().max(backward.abs());
        let gap = forward - backward;
        if gap.abs() > roundoff && gap.abs() > KINK_TOLERANCE * scale {
            // A smooth function has gap ≈ h·f'', so halving the step halves
            // the gap and leaves the central difference unchanged; a kink
            // inside the stencil breaks one of the two.
            let (fp2, fm2) = (eval(i, h / 2.0)?, eval(i, -h / 2.0)?);
            let gap2 = ((fp2 - f0) - (f0 - fm2)) / (h / 2.0);
            let numeric2 = (fp2 - fm2) / h;
            let curvature = (gap - 2.0 * gap2).abs();
            let drift = (numeric - numeric2).abs();
            if (curvature > 5.0 * roundoff && curvature > KINK_TOLERANCE * scale)
                || (drift > 2.0 * roundoff && drift > KINK_TOLERANCE * scale)
            {
                report.excluded += 1;
                continue;
            }
        }
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error <= tol && !report.max_rel_error.is_nan();
    Ok(report)
}

/// Checks the gradient of the scalar graph `f(input)` w.r.t. every entry
/// of `input`.
pub fn gradcheck<F>(f: F, input: &Tensor, h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let indices: Vec<usize> = (0..input.numel()).collect();
    gradcheck_entries(f, input, &indices, h, tol)
}

/// Like [`gradcheck`] but only over the listed entries.
pub fn gradcheck_entries<F>(
    f: F,
    input: &Tensor,
    indices: &[usize],
    h: f64,
    tol: f64,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input);
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g.grad(x).expect("param leaf carries a gradient").to_vec();

    let mut probe = input.clone();
    probe.set_requires_grad(false);
    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut shifted = probe.clone();
        shifted.data_mut()[i] += delta;
        let mut g = Graph::new();
        let x = g.constant(shifted);
        let y = f(&mut g, x)?;
        scalar_value(&g, y)
    };
    check_entries(&analytic, indices, eval, h, tol)
}

fn scalar_value(g: &Graph, y: Var) -> Result<f64> {
    let t = g.value(y);
    if t.numel() != 1 {
        return Err(TensorError::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_graph_is_near_exact() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.25 - 0.5);
        let weights = Tensor::from_fn(&[2, 3], |i| (i as f64 + 1.0) * 0.5);
        let r = gradcheck(
            |g, x| {
                let w = g.constant(weights.clone());
                let y = g.mul(x, w)?;
                Ok(g.sum(y))
            },
            &x,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn kink_is_excluded() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = gradcheck(
            |g, x| {
                let b = g.constant(Tensor::new(&[2], vec![1.0, 0.5]).unwrap());
                let y = g.sub_abs(x, b)?;
                Ok(g.sum(y))
            },
            &a,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 1);
        assert!(r.passed);
    }

    #[test]
    fn curvature_is_not_a_kink() {
        // x² near its minimum: one-sided slopes differ by far more than
        // the slope itself, yet the function is smooth.
        let r = check_entries(&[2e-6], &[0], |_, d| Ok((1e-6 + d).powi(2)), 1e-5, 1e-6).unwrap();
        assert_eq!((r.checked, r.excluded), (1, 0));
        assert!(r.passed, "{r:?}");
        // |x| with the kink 0.3h to the right is caught by step halving
        let r = check_entries(&[-1.0], &[0], |_, d| Ok((d - 3e-6f64).abs()), 1e-5, 1e-6).unwrap();
        assert_eq!(r.excluded, 1);
    }

    #[test]
    fn wrong_gradient_fails() {
        // f(x) = 3x but the claimed gradient is 1.
        let r = check_entries(&[1.0], &[0], |_, d| Ok((0.7 + d) * 3.0), 1e-5, 1e-6).unwrap();
        assert!(!r.passed);
        assert!((r.max_rel_error - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(check_entries(&[0.0], &[0], |_, _| Ok(0.0), 0.0, 1e-6).is_err());
    }
}
