//! Seeded finite-difference suites over every differentiable operator, the
//! total loss and a small end-to-end model.

use rand::seq::index::sample;
use rand::Rng;

use crate::losses::{total_loss, LossConfig, LossError, LossNet};
use crate::model::{Model, ModelConfig, ModelError};
use crate::rng;
use crate::tensor::{check_entries, gradcheck, gradcheck_entries, GradcheckReport, Graph, Result, Tensor, TensorError, Var};

pub const STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

/// Aggregate over all trials of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: &str, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
            tol,
            passed: true,
        }
    }

    fn absorb(&mut self, r: &GradcheckReport) {
        self.checked += r.checked;
        self.excluded += r.excluded;
        if r.max_rel_error > self.max_rel_error || r.max_rel_error.is_nan() {
            self.max_rel_error = r.max_rel_error;
        }
        self.passed &= r.passed;
    }

    pub fn line(&self) -> String {
        format!(
            "{:<16} {} trials {:>6} checked {:>4} excluded  max_rel_err {:.3e}  tol {:.0e}  {}",
            self.name,
            self.trials,
            self.checked,
            self.excluded,
            self.max_rel_error,
            self.tol,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

fn uniform(r: &mut rng::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// `Σ R ⊙ y` with a fixed random `R`, so every output entry carries a
/// distinct upstream gradient.
fn project(g: &mut Graph, y: Var, proj: &Tensor) -> Result<Var> {
    let p = g.constant(proj.clone());
    let m = g.mul(y, p)?;
    Ok(g.sum(m))
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    op: OpFn,
}

fn unary(name: &'static str, x: Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs: vec![x],
        op: Box::new(move |g, v| f(g, v[0])),
    }
}

fn binary(name: &'static str, a: Tensor, b: Tensor, f: impl Fn(&mut Graph, Var, Var) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs: vec![a, b],
        op: Box::new(move |g, v| f(g, v[0], v[1])),
    }
}

fn op_cases(r: &mut rng::Rng, trial: usize) -> Vec<OpCase> {
    let s = [2, 2, 3, 4];
    let mut u = |shape: &[usize], lo: f64, hi: f64| uniform(r, shape, lo, hi);
    let stride = 1 + trial % 2;
    vec![
        OpCase {
            name: "conv2d",
            inputs: vec![u(&[2, 3, 5, 5], -1.0, 1.0), u(&[4, 3, 3, 3], -1.0, 1.0), u(&[4], -1.0, 1.0)],
            op: Box::new(move |g, v| g.conv2d(v[0], v[1], v[2], stride, 1)),
        },
        OpCase {
            name: "conv2d_1x1",
            inputs: vec![u(&[1, 3, 4, 4], -1.0, 1.0), u(&[2, 3, 1, 1], -1.0, 1.0), u(&[2], -1.0, 1.0)],
            op: Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 0)),
        },
        unary("relu", u(&s, -1.0, 1.0), |g, x| Ok(g.relu(x))),
        binary("sub_abs", u(&s, -1.0, 1.0), u(&s, -1.0, 1.0), |g, a, b| g.sub_abs(a, b)),
        binary("add", u(&s, -1.0, 1.0), u(&s, -1.0, 1.0), |g, a, b| g.add(a, b)),
        binary("sub", u(&s, -1.0, 1.0), u(&s, -1.0, 1.0), |g, a, b| g.sub(a, b)),
        binary("mul", u(&s, -1.0, 1.0), u(&s, -1.0, 1.0), |g, a, b| g.mul(a, b)),
        binary("div", u(&s, -1.0, 1.0), u(&s, 0.5, 2.0), |g, a, b| g.div(a, b)),
        unary("mul_scalar", u(&s, -1.0, 1.0), |g, x| Ok(g.mul_scalar(x, -1.7))),
        unary("add_scalar", u(&s, -1.0, 1.0), |g, x| Ok(g.add_scalar(x, 0.3))),
        unary("sum", u(&s, -1.0, 1.0), |g, x| {
            let y = g.square(x);
            Ok(g.sum(y))
        }),
        unary("mean", u(&s, -1.0, 1.0), |g, x| {
            let y = g.square(x);
            Ok(g.mean(y))
        }),
        unary("sum_per_sample", u(&s, -1.0, 1.0), |g, x| Ok(g.sum_per_sample(x))),
        unary("sigmoid", u(&s, -4.0, 4.0), |g, x| Ok(g.sigmoid(x))),
        unary("log_sigmoid", u(&s, -6.0, 6.0), |g, x| Ok(g.log_sigmoid(x))),
        unary("ln", u(&s, 0.5, 2.0), |g, x| Ok(g.ln(x))),
        unary("sqrt", u(&s, 0.5, 2.0), |g, x| Ok(g.sqrt(x))),
        unary("sqrt_eps", u(&s, 0.5, 2.0), |g, x| Ok(g.sqrt_eps(x, 1e-12))),
        unary("square", u(&s, -1.0, 1.0), |g, x| Ok(g.square(x))),
        unary("clamp", u(&s, -1.0, 1.0), |g, x| Ok(g.clamp(x, -0.5, 0.5))),
        unary("maxpool2", u(&[1, 2, 4, 6], -1.0, 1.0), |g, x| g.maxpool2(x)),
        unary("avgpool_window", u(&[1, 2, 5, 5], -1.0, 1.0), |g, x| g.avgpool_window(x, 3)),
        unary("upsample2", u(&[1, 2, 3, 3], -1.0, 1.0), |g, x| g.upsample2(x)),
    ]
}

/// Names of the operators covered by [`ops_suite`].
pub fn op_names() -> Vec<&'static str> {
    op_cases(&mut rng::seeded(0, 0), 0).into_iter().map(|c| c.name).collect()
}

/// Every operator, `trials` seeded draws each, gradients checked w.r.t.
/// each of its inputs.
pub fn ops_suite(seed: u64, trials: usize) -> Result<Vec<SuiteResult>> {
    let mut results: Vec<SuiteResult> = op_names().iter().map(|n| SuiteResult::new(n, OP_TOL)).collect();
    for trial in 0..trials {
        let mut r = rng::seeded(seed, 0x4f50 + trial as u64);
        for (case, res) in op_cases(&mut r, trial).into_iter().zip(&mut results) {
            // projection shape comes from a dry run
            let mut g = Graph::new();
            let vars: Vec<Var> = case.inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = (case.op)(&mut g, &vars)?;
            let proj = uniform(&mut r, g.shape(out), -1.0, 1.0);
            for k in 0..case.inputs.len() {
                let others = case.inputs.clone();
                let op = &case.op;
                let report = gradcheck(
                    |g, x| {
                        let vars: Vec<Var> = others
                            .iter()
                            .enumerate()
                            .map(|(j, t)| if j == k { x } else { g.constant(t.clone()) })
                            .collect();
                        let y = op(g, &vars)?;
                        project(g, y, &proj)
                    },
                    &case.inputs[k],
                    STEP,
                    OP_TOL,
                )?;
                res.absorb(&report);
            }
            res.trials += 1;
        }
    }
    Ok(results)
}

fn blob_mask(r: &mut rng::Rng, n: usize, side: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        let (cy, cx) = (r.gen_range(0.3..0.7) * side as f64, r.gen_range(0.3..0.7) * side as f64);
        let rad = r.gen_range(0.15..0.3) * side as f64;
        for y in 0..side {
            for x in 0..side {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                data.push((d < rad) as u8 as f64);
            }
        }
    }
    Tensor::new(&[n, 1, side, side], data).expect("positive extents")
}

fn loss_error(e: LossError) -> TensorError {
    match e {
        LossError::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "total_loss",
            reason: other.to_string(),
        },
    }
}

/// Gradient of the total loss, and of each of its terms, w.r.t. the
/// prediction on a 2×1×32×32 batch (`entries` random pixels per trial).
pub fn loss_suite(seed: u64, trials: usize, entries: usize) -> Result<Vec<SuiteResult>> {
    let names = ["total_loss", "wbce", "wiou", "feature_loss"];
    let mut results: Vec<SuiteResult> = names.iter().map(|n| SuiteResult::new(n, END_TO_END_TOL)).collect();
    let cfg = LossConfig::for_input(32);
    let net = LossNet::new(cfg.lossnet_seed);
    for trial in 0..trials {
        let mut r = rng::seeded(seed, 0x4c53 + trial as u64);
        let gt = blob_mask(&mut r, 2, 32);
        // predictions kept clear of the probability clamp
        let pred = uniform(&mut r, &[2, 1, 32, 32], 0.02, 0.98);
        let idx = sample(&mut r, pred.numel(), entries.min(pred.numel())).into_vec();
        for (term, res) in results.iter_mut().enumerate() {
            let report = gradcheck_entries(
                |g, p| {
                    let t = total_loss(g, p, &gt, Some(&net), &cfg).map_err(loss_error)?;
                    Ok(match term {
                        0 => t.total,
                        1 => t.wbce,
                        2 => t.wiou,
                        _ => t.feature.expect("lossnet enabled"),
                    })
                },
                &pred,
                &idx,
                STEP,
                END_TO_END_TOL,
            )?;
            res.absorb(&report);
            res.trials += 1;
        }
    }
    Ok(results)
}

fn model_error(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "model",
            reason: other.to_string(),
        },
    }
}

/// End-to-end: total loss of a 32-px, C = 4, depth-5 model w.r.t.
/// `entries` randomly chosen scalar parameters per trial.
pub fn model_suite(seed: u64, trials: usize, entries: usize) -> Result<Vec<SuiteResult>> {
    let mut res = SuiteResult::new("model", END_TO_END_TOL);
    let cfg = LossConfig::for_input(32);
    let net = LossNet::new(cfg.lossnet_seed);
    for trial in 0..trials {
        let mut r = rng::seeded(seed, 0x4d44 + trial as u64);
        let model = Model::new(ModelConfig {
            input_size: 32,
            channels: 4,
            depth: 5,
            seed: rng::mix(seed, trial as u64),
            ..Default::default()
        })
        .map_err(model_error)?;
        let image = uniform(&mut r, &[1, 3, 32, 32], 0.0, 1.0);
        let gt = blob_mask(&mut r, 1, 32);

        let loss_of = |params: &[Tensor], trainable: bool| -> Result<(Graph, Vec<Var>, Var)> {
            let m = Model::from_params(*model.config(), params.to_vec()).map_err(model_error)?;
            let mut g = Graph::new();
            let vars = m.bind(&mut g, trainable);
            let x = g.constant(image.clone());
            let p = m.forward(&mut g, &vars, x).map_err(model_error)?;
            let t = total_loss(&mut g, p, &gt, Some(&net), &cfg).map_err(loss_error)?;
            Ok((g, vars, t.total))
        };

        let (mut g, vars, loss) = loss_of(model.params(), true)?;
        g.backward(loss)?;
        let analytic: Vec<f64> = vars.iter().flat_map(|&v| g.grad(v).expect("trainable").to_vec()).collect();
        let sizes: Vec<usize> = model.params().iter().map(Tensor::numel).collect();
        let locate = |mut flat: usize| {
            for (t, &n) in sizes.iter().enumerate() {
                if flat < n {
                    return (t, flat);
                }
                flat -= n;
            }
            unreachable!("index within parameter count")
        };
        let idx = sample(&mut r, analytic.len(), entries.min(analytic.len())).into_vec();
        let report = check_entries(
            &analytic,
            &idx,
            |i, delta| {
                let (t, j) = locate(i);
                let mut params = model.params().to_vec();
                params[t].data_mut()[j] += delta;
                let (g, _, loss) = loss_of(&params, false)?;
                Ok(g.value(loss).item())
            },
            STEP,
            END_TO_END_TOL,
        )?;
        res.absorb(&report);
        res.trials += 1;
    }
    Ok(vec![res])
}
