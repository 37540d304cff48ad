use super::kernels::{self, ConvGeom};
use super::{ensure_same_shape, Result, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    SubAbs(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulScalar(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Ln(Var),
    Sqrt(Var),
    SqrtEps { x: Var, eps: f64 },
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, k: usize },
    Upsample2(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::SubAbs(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                vec![*a, *b]
            }
            Op::Relu(x)
            | Op::MulScalar(x, _)
            | Op::AddScalar(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumPerSample(x)
            | Op::Sigmoid(x)
            | Op::LogSigmoid(x)
            | Op::Ln(x)
            | Op::Sqrt(x)
            | Op::Square(x)
            | Op::Upsample2(x) => vec![*x],
            Op::Clamp { x, .. }
            | Op::SqrtEps { x, .. }
            | Op::MaxPool2 { x, .. }
            | Op::AvgPool { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation record.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    visits: Vec<u32>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its gradient is accumulated across backward calls
    /// when `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf, false)
    }

    /// Records a gradient-carrying copy of `tensor` regardless of its flag.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let t = tensor.clone().with_requires_grad();
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Number of times each node's backward rule ran during the most
    /// recent [`Graph::backward`] call.
    pub fn backward_visits(&self) -> &[u32] {
        &self.visits
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape(), data).expect("unary keeps shape");
        let needs = self.any_grad(&[x]);
        self.push(value, op, needs)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        ensure_same_shape(name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape(), data).expect("binary keeps shape");
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    /// Cross-correlation of an N×Cin×H×W input with a Cout×Cin×k×k kernel
    /// plus a per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("conv2d")?;
        let ws = self.value(weight).shape().to_vec();
        let &[cout, wcin, k, k2] = ws.as_slice() else {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                reason: format!("weight must be Cout×Cin×k×k, got {ws:?}"),
            });
        };
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: vec![cout, cin, k, k2],
                actual: ws,
            });
        }
        if k != k2 || k % 2 == 0 {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                reason: format!("kernel must be square with odd size, got {k}×{k2}"),
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                reason: format!("padded input {h}×{w} (+{padding}) smaller than kernel {k}"),
            });
        }
        if self.value(bias).shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                expected: vec![cout],
                actual: self.value(bias).shape().to_vec(),
            });
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            padding,
        };
        let (ho, wo) = (geom.out_h(), geom.out_w());
        let mut out = vec![0.0; n * cout * ho * wo];
        kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &mut out,
        );
        let value = Tensor::new(&[n, cout, ho, wo], out)?;
        let needs = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v < 0.0 { 0.0 } else { v })
    }

    /// Elementwise |a − b|.
    pub fn sub_abs(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub_abs", a, b, Op::SubAbs(a, b), |x, y| (x - y).abs())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::MulScalar(a, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + s)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = kernels::compensated_sum(self.value(a).data());
        let needs = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = kernels::compensated_sum(t.data()) / t.numel() as f64;
        let needs = self.any_grad(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), needs)
    }

    /// Sums every axis but the first: N×… → N.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.shape()[0];
        let per = t.numel() / n;
        let sums = t.data().chunks(per).map(kernels::compensated_sum).collect();
        let value = Tensor::new(&[n], sums).expect("batch extent is positive");
        let needs = self.any_grad(&[a]);
        self.push(value, Op::SumPerSample(a), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), stable_sigmoid)
    }

    /// `ln σ(x)`, evaluated without forming `σ(x)` so saturated inputs keep
    /// full precision.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::LogSigmoid(x), log_sigmoid)
    }

    /// The input of `v` when `v` was produced by [`Graph::sigmoid`].
    pub fn sigmoid_input(&self, v: Var) -> Option<Var> {
        match self.nodes[v.0].op {
            Op::Sigmoid(x) => Some(x),
            _ => None,
        }
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    /// Exact `√x` whose derivative is taken as `1 / (2√(x + eps))`, so the
    /// gradient stays finite at zero while the value at zero is still zero.
    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, Op::SqrtEps { x, eps }, f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Clamps into `[lo, hi]`; gradient flows only where the input lies
    /// strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    /// 2×2 max pooling with stride 2.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4("maxpool2")?;
        let [n, c, h, w] = dims;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "maxpool2",
                reason: format!("spatial extent {h}×{w} must be even"),
            });
        }
        let mut out = vec![0.0; n * c * (h / 2) * (w / 2)];
        let argmax = kernels::maxpool2_forward(dims, self.value(x).data(), &mut out);
        let value = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, needs))
    }

    /// Same-resolution k×k window mean, zero padded, divided by k².
    pub fn avgpool_window(&mut self, x: Var, k: usize) -> Result<Var> {
        if k % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "avgpool_window",
                reason: format!("window size must be odd, got {k}"),
            });
        }
        let dims = self.value(x).dims4("avgpool_window")?;
        let mut out = vec![0.0; self.value(x).numel()];
        kernels::box_mean(dims, k, self.value(x).data(), &mut out);
        let value = Tensor::new(self.value(x).shape(), out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::AvgPool { x, k }, needs))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4("upsample2")?;
        let [n, c, h, w] = dims;
        let mut out = vec![0.0; n * c * 4 * h * w];
        kernels::upsample2_forward(dims, self.value(x).data(), &mut out);
        let value = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::Upsample2(x), needs))
    }

    /// Reverse-accumulates d`loss`/d`leaf` into every gradient-carrying
    /// leaf. Calling it twice without [`Graph::zero_grad`] adds the
    /// gradients twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let count = loss.0 + 1;
        self.visits = vec![0; self.nodes.len()];

        let mut reachable = vec![false; count];
        reachable[loss.0] = true;
        for i in (0..count).rev() {
            if reachable[i] && self.nodes[i].needs_grad {
                for v in self.nodes[i].op.inputs() {
                    reachable[v.0] = true;
                }
            }
        }

        let mut adj: Vec<Option<Vec<f64>>> = (0..count).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..count).rev() {
            if !reachable[i] || !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.visits[i] += 1;
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut gi = self.grad_buf(*input);
                let mut gw = self.grad_buf(*weight);
                let mut gb = self.grad_buf(*bias);
                kernels::conv2d_backward(
                    geom,
                    val(*input),
                    val(*weight),
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                deposit(adj, *input, gi);
                deposit(adj, *weight, gw);
                deposit(adj, *bias, gb);
            }
            Op::Relu(x) => {
                let xs = val(*x);
                self.route(adj, *x, |j| if xs[j] > 0.0 { g[j] } else { 0.0 });
            }
            Op::SubAbs(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let sign = |j: usize| {
                    let d = xa[j] - xb[j];
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                self.route(adj, *a, |j| sign(j) * g[j]);
                self.route(adj, *b, |j| -sign(j) * g[j]);
            }
            Op::Add(a, b) => {
                self.route(adj, *a, |j| g[j]);
                self.route(adj, *b, |j| g[j]);
            }
            Op::Sub(a, b) => {
                self.route(adj, *a, |j| g[j]);
                self.route(adj, *b, |j| -g[j]);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                self.route(adj, *a, |j| g[j] * xb[j]);
                self.route(adj, *b, |j| g[j] * xa[j]);
            }
            Op::Div(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                self.route(adj, *a, |j| g[j] / xb[j]);
                self.route(adj, *b, |j| -g[j] * xa[j] / (xb[j] * xb[j]));
            }
            Op::MulScalar(x, s) => self.route(adj, *x, |j| g[j] * s),
            Op::AddScalar(x) => self.route(adj, *x, |j| g[j]),
            Op::Sum(x) => self.route(adj, *x, |_| g[0]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                self.route(adj, *x, |_| g[0] / n);
            }
            Op::SumPerSample(x) => {
                let t = &self.nodes[x.0].value;
                let per = t.numel() / t.shape()[0];
                self.route(adj, *x, |j| g[j / per]);
            }
            Op::Sigmoid(x) => self.route(adj, *x, |j| g[j] * out[j] * (1.0 - out[j])),
            Op::LogSigmoid(x) => {
                let xs = val(*x);
                self.route(adj, *x, |j| g[j] * stable_sigmoid(-xs[j]));
            }
            Op::Ln(x) => {
                let xs = val(*x);
                self.route(adj, *x, |j| g[j] / xs[j]);
            }
            Op::Sqrt(x) => self.route(adj, *x, |j| g[j] * 0.5 / out[j]),
            Op::SqrtEps { x, eps } => {
                let xs = val(*x);
                self.route(adj, *x, |j| g[j] * 0.5 / (xs[j] + eps).sqrt());
            }
            Op::Square(x) => {
                let xs = val(*x);
                self.route(adj, *x, |j| 2.0 * xs[j] * g[j]);
            }
            Op::Clamp { x, lo, hi } => {
                let xs = val(*x);
                self.route(adj, *x, |j| {
                    if xs[j] > *lo && xs[j] < *hi {
                        g[j]
                    } else {
                        0.0
                    }
                });
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(mut buf) = self.grad_buf(*x) {
                    for (o, &src) in argmax.iter().enumerate() {
                        buf[src] += g[o];
                    }
                    deposit(adj, *x, Some(buf));
                }
            }
            Op::AvgPool { x, k } => {
                if let Some(mut buf) = self.grad_buf(*x) {
                    // A zero-padded symmetric box filter is self-adjoint.
                    let dims = node.value.dims4("avgpool_window").expect("4-D");
                    kernels::box_mean(dims, *k, g, &mut buf);
                    deposit(adj, *x, Some(buf));
                }
            }
            Op::Upsample2(x) => {
                if let Some(mut buf) = self.grad_buf(*x) {
                    let dims = self.nodes[x.0].value.dims4("upsample2").expect("4-D");
                    kernels::upsample2_backward(dims, g, &mut buf);
                    deposit(adj, *x, Some(buf));
                }
            }
        }
    }

    fn grad_buf(&self, v: Var) -> Option<Vec<f64>> {
        let node = &self.nodes[v.0];
        node.needs_grad.then(|| vec![0.0; node.value.numel()])
    }

    fn route(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        match adj[v.0].as_mut() {
            Some(acc) => acc.iter_mut().enumerate().for_each(|(j, a)| *a += f(j)),
            None => adj[v.0] = Some((0..n).map(f).collect()),
        }
    }
}

fn deposit(adj: &mut [Option<Vec<f64>>], v: Var, grad: Option<Vec<f64>>) {
    let Some(grad) = grad else { return };
    match adj[v.0].as_mut() {
        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
        None => adj[v.0] = Some(grad),
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
