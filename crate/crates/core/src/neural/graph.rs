//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass;
//! [`Graph::backward`] walks the tape in reverse and accumulates exact
//! gradients into every node that depends on a trainable leaf. Graphs are
//! cheap to build and are thrown away after each step.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(format!("{n} values for {shape:?}"), values.len()));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![v],
            grad: None,
        }
    }

    pub fn from_array<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Self {
        Self {
            shape: a.shape().to_vec(),
            values: a.iter().copied().collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.values[0]
    }

    fn dims2(&self) -> (usize, usize) {
        let last = *self.shape.last().unwrap_or(&1);
        let rows = if last == 0 { 0 } else { self.values.len() / last };
        (rows, last)
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Scale(Var, f64),
    MulCols(Var, Vec<f64>),
    Reshape(Var),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        cols: Vec<f64>,
        width: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    ScatterMean {
        x: Var,
        rows: Vec<usize>,
        counts: Vec<usize>,
    },
    Diff(Var),
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    Mse(Var, Var),
    Sum(Var),
    Max {
        x: Var,
        index: usize,
    },
    LogSumExp {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize, ta: bool, tb: bool, beta: f64) {
    // views honour the requested transposes without copying
    let av = if ta {
        ArrayView2::from_shape((k, n), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((n, k), a).unwrap()
    };
    let bv = if tb {
        ArrayView2::from_shape((m, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, m), b).unwrap()
    };
    let mut ov = ArrayViewMut2::from_shape((n, m), out).unwrap();
    general_mat_mul(1.0, &av, &bv, beta, &mut ov);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, tensor: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            tensor,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients are accumulated into it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn vals(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `x (.., k) @ w (k, m)`; leading dimensions of `x` are flattened.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, k) = self.value(x).dims2();
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != k {
            return Err(Error::shape(format!("[{k}, _] weight"), format!("{ws:?}")));
        }
        let m = ws[1];
        let mut out = vec![0.0; n * m];
        matmul_into(self.vals(x), self.vals(w), &mut out, n, k, m, false, false, 0.0);
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(x, w), rg))
    }

    /// Adds `b (m)` to every row of `x (.., m)`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.value(x).dims2();
        if self.value(b).len() != m {
            return Err(Error::shape(format!("bias of {m}"), self.value(b).len()));
        }
        let bv = self.vals(b).to_vec();
        let mut out = self.vals(x).to_vec();
        for row in out.chunks_mut(m) {
            for (o, bb) in row.iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, b), rg))
    }

    /// `x w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b)?;
        let out: Vec<f64> = self.vals(a).iter().zip(self.vals(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.vals(x).iter().map(|v| f(*v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape,
                values: out,
                grad: None,
            },
            op,
            rg,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// Multiplies column `j` of `x (.., m)` by `c[j]`.
    pub fn mul_cols(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let (_, m) = self.value(x).dims2();
        if c.len() != m {
            return Err(Error::shape(format!("{m} column factors"), c.len()));
        }
        let mut out = self.vals(x).to_vec();
        for row in out.chunks_mut(m) {
            for (o, cc) in row.iter_mut().zip(c) {
                *o *= cc;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MulCols(x, c.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape(format!("{:?}", self.shape(x)), format!("{shape:?}")));
        }
        let values = self.vals(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape,
                values,
                grad: None,
            },
            Op::Reshape(x),
            rg,
        ))
    }

    /// Valid 1-D cross-correlation.
    ///
    /// `x (B, L, C_in)`, `kernel (width, C_in, K)`, `bias (K)` → `(B, L - width + 1, K)`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 3 || ks[1] != xs[2] {
            return Err(Error::shape(
                format!("x (B, L, C) with kernel (w, C, K); x {xs:?}"),
                format!("kernel {ks:?}"),
            ));
        }
        let (b, l, cin) = (xs[0], xs[1], xs[2]);
        let (width, k) = (ks[0], ks[2]);
        if width == 0 || width > l {
            return Err(Error::InvalidParameter(format!(
                "kernel width {width} exceeds sequence length {l}"
            )));
        }
        if self.value(bias).len() != k {
            return Err(Error::shape(format!("bias of {k}"), self.value(bias).len()));
        }
        let lo = l - width + 1;
        let row = width * cin;
        let xv = self.vals(x);
        let mut cols = Vec::with_capacity(b * lo * row);
        for bi in 0..b {
            for t in 0..lo {
                let start = (bi * l + t) * cin;
                cols.extend_from_slice(&xv[start..start + row]);
            }
        }
        let mut out = vec![0.0; b * lo * k];
        matmul_into(&cols, self.vals(kernel), &mut out, b * lo, row, k, false, false, 0.0);
        let bv = self.vals(bias);
        for r in out.chunks_mut(k) {
            for (o, bb) in r.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            Tensor::new(vec![b, lo, k], out)?,
            Op::Conv1d {
                x,
                kernel,
                bias,
                cols,
                width,
            },
            rg,
        ))
    }

    /// Max pooling with window and stride 2 along the time axis of `(B, L, C)`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] < 2 {
            return Err(Error::shape("(B, L >= 2, C)", format!("{xs:?}")));
        }
        let (b, l, c) = (xs[0], xs[1], xs[2]);
        let lo = l / 2;
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(b * lo * c);
        let mut argmax = Vec::with_capacity(b * lo * c);
        for bi in 0..b {
            for t in 0..lo {
                for ch in 0..c {
                    let i0 = (bi * l + 2 * t) * c + ch;
                    let i1 = i0 + c;
                    let (i, v) = if xv[i1] > xv[i0] { (i1, xv[i1]) } else { (i0, xv[i0]) };
                    out.push(v);
                    argmax.push(i);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, lo, c], out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Row gather on a 2-D `(N, D)` tensor: output row `i` is input row `rows[i]`.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (n, d) = self.value(x).dims2();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(format!("row < {n}"), bad));
        }
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(&xv[r * d..(r + 1) * d]);
        }
        let rg = self.rg(x);
        let m = rows.len();
        Ok(self.push(Tensor::new(vec![m, d], out)?, Op::Gather { x, rows }, rg))
    }

    /// Averages rows of `x (M, D)` into `n_out` buckets; input row `i`
    /// goes to bucket `rows[i]`. Empty buckets are zero.
    pub fn scatter_mean(&mut self, x: Var, rows: Vec<usize>, n_out: usize) -> Result<Var> {
        let (m, d) = self.value(x).dims2();
        if rows.len() != m {
            return Err(Error::shape(format!("{m} row targets"), rows.len()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_out) {
            return Err(Error::shape(format!("target < {n_out}"), bad));
        }
        let mut counts = vec![0usize; n_out];
        for &r in &rows {
            counts[r] += 1;
        }
        let xv = self.vals(x);
        let mut out = vec![0.0; n_out * d];
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..d {
                out[r * d + j] += xv[i * d + j];
            }
        }
        for (r, &c) in counts.iter().enumerate() {
            if c > 1 {
                for v in &mut out[r * d..(r + 1) * d] {
                    *v /= c as f64;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n_out, d], out)?,
            Op::ScatterMean { x, rows, counts },
            rg,
        ))
    }

    /// First difference along rows of `(T, F)`; row 0 is zero.
    pub fn diff_rows(&mut self, x: Var) -> Result<Var> {
        let (t, f) = self.value(x).dims2();
        let xv = self.vals(x);
        let mut out = vec![0.0; t * f];
        for i in 1..t {
            for j in 0..f {
                out[i * f + j] = xv[i * f + j] - xv[(i - 1) * f + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![t, f], out)?, Op::Diff(x), rg))
    }

    /// `[a | b]` for `(T, Fa)` and `(T, Fb)`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, fa) = self.value(a).dims2();
        let (tb, fb) = self.value(b).dims2();
        if ta != tb {
            return Err(Error::shape(format!("{ta} rows"), tb));
        }
        let (av, bv) = (self.vals(a), self.vals(b));
        let mut out = Vec::with_capacity(ta * (fa + fb));
        for i in 0..ta {
            out.extend_from_slice(&av[i * fa..(i + 1) * fa]);
            out.extend_from_slice(&bv[i * fb..(i + 1) * fb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![ta, fa + fb], out)?, Op::ConcatCols(a, b), rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (t, f) = self.value(x).dims2();
        if start > end || end > f {
            return Err(Error::shape(format!("columns within {f}"), format!("{start}..{end}")));
        }
        let xv = self.vals(x);
        let w = end - start;
        let mut out = Vec::with_capacity(t * w);
        for i in 0..t {
            out.extend_from_slice(&xv[i * f + start..i * f + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![t, w], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target)?;
        let n = self.value(pred).len().max(1) as f64;
        let s: f64 = self
            .vals(pred)
            .iter()
            .zip(self.vals(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Global maximum; the subgradient flows to the first maximal element.
    pub fn max(&mut self, x: Var) -> Result<Var> {
        let xv = self.vals(x);
        if xv.is_empty() {
            return Err(Error::EmptySample);
        }
        let index = (0..xv.len()).fold(0, |best, i| if xv[i] > xv[best] { i } else { best });
        let v = xv[index];
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::Max { x, index }, rg))
    }

    /// Smooth maximum `(1/beta) ln Σ exp(beta x_i)`.
    pub fn logsumexp(&mut self, x: Var, beta: f64) -> Result<Var> {
        let xv = self.vals(x);
        if xv.is_empty() {
            return Err(Error::EmptySample);
        }
        let m = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (beta * (v - m)).exp()).collect();
        let z: f64 = exps.iter().sum();
        let weights = exps.iter().map(|e| e / z).collect();
        let v = m + z.ln() / beta;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::LogSumExp { x, weights }, rg))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::shape("scalar output", format!("{:?}", self.shape(out))));
        }
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
        self.nodes[out.0].tensor.grad = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.nodes[i].tensor.grad.take() else {
                continue;
            };
            self.propagate(i, &gy);
            self.nodes[i].tensor.grad = Some(gy);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let t = &mut self.nodes[v.0].tensor;
        let n = t.values.len();
        let buf = t.grad.get_or_insert_with(|| vec![0.0; n]);
        g(buf);
    }

    fn accumulate_elementwise(&mut self, v: Var, gy: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.accumulate(v, |buf| {
            for (i, (b, g)) in buf.iter_mut().zip(gy).enumerate() {
                *b += f(i, *g);
            }
        });
    }

    fn propagate(&mut self, i: usize, gy: &[f64]) {
        // take the op out so the graph can be borrowed mutably
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (n, k) = self.value(*x).dims2();
                let m = self.shape(*w)[1];
                if self.rg(*x) {
                    let wv = self.vals(*w).to_vec();
                    self.accumulate(*x, |buf| matmul_into(gy, &wv, buf, n, m, k, false, true, 1.0));
                }
                if self.rg(*w) {
                    let xv = self.vals(*x).to_vec();
                    self.accumulate(*w, |buf| matmul_into(&xv, gy, buf, k, n, m, true, false, 1.0));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate_elementwise(*x, gy, |_, g| g);
                let m = self.value(*b).len();
                self.accumulate(*b, |buf| {
                    for row in gy.chunks(m) {
                        for (bb, g) in buf.iter_mut().zip(row) {
                            *bb += g;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate_elementwise(*a, gy, |_, g| g);
                self.accumulate_elementwise(*b, gy, |_, g| g);
            }
            Op::Sub(a, b) => {
                self.accumulate_elementwise(*a, gy, |_, g| g);
                self.accumulate_elementwise(*b, gy, |_, g| -g);
            }
            Op::Relu(x) => {
                let xv = self.vals(*x).to_vec();
                self.accumulate_elementwise(*x, gy, |j, g| if xv[j] > 0.0 { g } else { 0.0 });
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].tensor.values.clone();
                self.accumulate_elementwise(*x, gy, |j, g| g * (1.0 - y[j] * y[j]));
            }
            Op::Abs(x) => {
                let xv = self.vals(*x).to_vec();
                self.accumulate_elementwise(*x, gy, |j, g| {
                    if xv[j] > 0.0 {
                        g
                    } else if xv[j] < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate_elementwise(*x, gy, |_, g| g * c),
            Op::MulCols(x, c) => {
                let m = c.len();
                self.accumulate_elementwise(*x, gy, |j, g| g * c[j % m]);
            }
            Op::Reshape(x) => self.accumulate_elementwise(*x, gy, |_, g| g),
            Op::Conv1d {
                x,
                kernel,
                bias,
                cols,
                width,
            } => {
                let xs = self.shape(*x).to_vec();
                let (b, l, cin) = (xs[0], xs[1], xs[2]);
                let k = self.shape(*kernel)[2];
                let lo = l - width + 1;
                let row = width * cin;
                if self.rg(*kernel) {
                    self.accumulate(*kernel, |buf| {
                        matmul_into(cols, gy, buf, row, b * lo, k, true, false, 1.0)
                    });
                }
                self.accumulate(*bias, |buf| {
                    for r in gy.chunks(k) {
                        for (bb, g) in buf.iter_mut().zip(r) {
                            *bb += g;
                        }
                    }
                });
                if self.rg(*x) {
                    let kv = self.vals(*kernel).to_vec();
                    let mut dcols = vec![0.0; b * lo * row];
                    matmul_into(gy, &kv, &mut dcols, b * lo, k, row, false, true, 0.0);
                    self.accumulate(*x, |buf| {
                        for bi in 0..b {
                            for t in 0..lo {
                                let start = (bi * l + t) * cin;
                                let src = &dcols[(bi * lo + t) * row..(bi * lo + t + 1) * row];
                                for (d, s) in buf[start..start + row].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                    });
                }
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate(*x, |buf| {
                    for (g, &j) in gy.iter().zip(argmax) {
                        buf[j] += g;
                    }
                });
            }
            Op::Gather { x, rows } => {
                let d = self.value(*x).dims2().1;
                self.accumulate(*x, |buf| {
                    for (o, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            buf[r * d + j] += gy[o * d + j];
                        }
                    }
                });
            }
            Op::ScatterMean { x, rows, counts } => {
                let d = self.value(*x).dims2().1;
                self.accumulate(*x, |buf| {
                    for (o, &r) in rows.iter().enumerate() {
                        let c = counts[r] as f64;
                        for j in 0..d {
                            buf[o * d + j] += gy[r * d + j] / c;
                        }
                    }
                });
            }
            Op::Diff(x) => {
                let (t, f) = self.value(*x).dims2();
                self.accumulate(*x, |buf| {
                    for r in 1..t {
                        for j in 0..f {
                            buf[r * f + j] += gy[r * f + j];
                            buf[(r - 1) * f + j] -= gy[r * f + j];
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (t, fa) = self.value(*a).dims2();
                let fb = self.value(*b).dims2().1;
                let w = fa + fb;
                self.accumulate(*a, |buf| {
                    for r in 0..t {
                        for j in 0..fa {
                            buf[r * fa + j] += gy[r * w + j];
                        }
                    }
                });
                self.accumulate(*b, |buf| {
                    for r in 0..t {
                        for j in 0..fb {
                            buf[r * fb + j] += gy[r * w + fa + j];
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (t, f) = self.value(*x).dims2();
                let w = self.nodes[i].tensor.dims2().1;
                self.accumulate(*x, |buf| {
                    for r in 0..t {
                        for j in 0..w {
                            buf[r * f + start + j] += gy[r * w + j];
                        }
                    }
                });
            }
            Op::Mse(p, t) => {
                let n = self.value(*p).len().max(1) as f64;
                let diff: Vec<f64> = self
                    .vals(*p)
                    .iter()
                    .zip(self.vals(*t))
                    .map(|(a, b)| 2.0 * (a - b) / n * gy[0])
                    .collect();
                self.accumulate_elementwise(*p, &diff, |_, g| g);
                self.accumulate_elementwise(*t, &diff, |_, g| -g);
            }
            Op::Sum(x) => {
                let g = gy[0];
                self.accumulate(*x, |buf| buf.iter_mut().for_each(|b| *b += g));
            }
            Op::Max { x, index } => {
                let g = gy[0];
                self.accumulate(*x, |buf| buf[*index] += g);
            }
            Op::LogSumExp { x, weights, .. } => {
                let g = gy[0];
                self.accumulate(*x, |buf| {
                    for (b, w) in buf.iter_mut().zip(weights) {
                        *b += g * w;
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}
