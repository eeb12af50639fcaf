use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities used by the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Swish,
    #[serde(alias = "identity")]
    None,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    // exp - 1 instead of expm1: much cheaper, absolute error stays at ulp level
                    x.exp() - 1.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Swish => x * sigmoid(x),
            Activation::None => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::None => 1.0,
        }
    }

    /// `σ'(x)` given `y = σ(x)`, avoiding a second transcendental call where possible.
    #[inline]
    pub fn derivative_from_output(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            _ => self.derivative(x),
        }
    }

    /// `σ''(x)` given `y = σ(x)`.
    #[inline]
    pub fn second_derivative_from_output(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    0.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
            _ => self.second_derivative(x),
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    0.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
            }
            Activation::None => 0.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRowBias { x: Var, bias: Var },
    AddChannelBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Axpy { x: Var, y: Var, alpha: f64 },
    Act(Var, Activation),
    ActDeriv(Var, Activation),
    ActDerivOut { x: Var, y: Var, kind: Activation },
    Conv1d { x: Var, w: Var, stride: usize },
    Repeat2(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SumSquares(Var),
    Sum(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Whether any parameter feeds this node.
    grad: bool,
}

/// Gradients of a scalar with respect to every registered parameter, keyed by parameter id.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Add `other` into `self`, id by id.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            match self.grads.get_mut(&id) {
                Some(acc) => {
                    let mut data = std::mem::take(acc).into_data();
                    for (a, b) in data.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                    *acc = Tensor::from_parts(g.shape().to_vec(), data);
                }
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.grads.values_mut() {
            *g = g.map(|x| alpha * x);
        }
    }
}

impl Default for Tensor {
    fn default() -> Self {
        Tensor::zeros(&[0])
    }
}

/// Append-only record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// A tape is single-threaded; build one tape per batch chunk when fanning out.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let live = |v: &Var| self.nodes[v.0].grad;
        let grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                live(a) || live(b)
            }
            Op::AddRowBias { x, bias } | Op::AddChannelBias { x, bias } => live(x) || live(bias),
            Op::Axpy { x, y, .. } => live(x) || live(y),
            Op::Conv1d { x, w, .. } => live(x) || live(w),
            Op::Scale(x, _)
            | Op::Act(x, _)
            | Op::ActDeriv(x, _)
            | Op::ActDerivOut { x, .. }
            | Op::Repeat2(x)
            | Op::Reshape(x)
            | Op::SliceCols { x, .. }
            | Op::SumSquares(x)
            | Op::Sum(x) => live(x),
            Op::ConcatCols(parts) => parts.iter().any(live),
        };
        self.nodes.push(Node { op, value, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Record a tensor that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// Record a trainable tensor; its gradient is reported under `id`.
    pub fn param(&mut self, id: usize, t: Tensor) -> Var {
        self.push(Op::Param(id), t)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product with optional transposes: `op(a) · op(b)`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            ka,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            0.0,
            &mut out,
        );
        Ok(self.push(
            Op::MatMul { a, b, ta, tb },
            Tensor::from_parts(vec![m, n], out),
        ))
    }

    /// `x + bias` with `bias` broadcast along every leading axis (bias length = last extent).
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != n {
            return Err(shape_err("add_row_bias", sx, sb));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        let shape = sx.to_vec();
        Ok(self.push(Op::AddRowBias { x, bias }, Tensor::from_parts(shape, out)))
    }

    /// `x[b, c, l] + bias[c]` for `x` of shape `(B, C, L)`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 3 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(shape_err("add_channel_bias", sx, sb));
        }
        let l = sx[2];
        let c = sx[1];
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(l.max(1)).enumerate() {
            let bc = b[i % c];
            for o in chunk {
                *o += bc;
            }
        }
        let shape = sx.to_vec();
        Ok(self.push(
            Op::AddChannelBias { x, bias },
            Tensor::from_parts(shape, out),
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    /// `x + alpha * y`.
    pub fn axpy(&mut self, x: Var, y: Var, alpha: f64) -> Result<Var> {
        let t = self.binary(x, y, "axpy", |a, b| a + alpha * b)?;
        Ok(self.push(Op::Axpy { x, y, alpha }, t))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let t = self.value(x).map(|v| alpha * v);
        self.push(Op::Scale(x, alpha), t)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::None {
            return x;
        }
        let t = self.value(x).map(|v| kind.apply(v));
        self.push(Op::Act(x, kind), t)
    }

    /// Pointwise derivative `σ'(x)` of an activation, itself differentiable.
    pub fn activation_derivative(&mut self, x: Var, kind: Activation) -> Var {
        let t = self.value(x).map(|v| kind.derivative(v));
        self.push(Op::ActDeriv(x, kind), t)
    }

    /// Same value as [`Tape::activation_derivative`], reusing `y = σ(x)` already on the tape.
    ///
    /// `y` must hold `σ(x)`; the gradient flows to `x` only.
    pub fn activation_derivative_from_output(
        &mut self,
        x: Var,
        y: Var,
        kind: Activation,
    ) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        if xv.shape() != yv.shape() {
            return Err(shape_err(
                "activation_derivative_from_output",
                xv.shape(),
                yv.shape(),
            ));
        }
        let data = xv
            .data()
            .iter()
            .zip(yv.data())
            .map(|(&a, &b)| kind.derivative_from_output(a, b))
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(Op::ActDerivOut { x, y, kind }, t))
    }

    /// Periodic 1D cross-correlation.
    ///
    /// `x` has shape `(B, C_in, L)` or `(C_in, L)`, `kernel` has shape `(C_out, C_in, w)`.
    /// Output position `i` reads input positions `i*stride + j - (w-1)/2` (mod `L`) for
    /// `j in 0..w`: centered for odd widths, `(i, i+1)` for width 2.
    pub fn conv1d_periodic(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        let (batch, cin, len, rank2) = match sx.len() {
            2 => (1, sx[0], sx[1], true),
            3 => (sx[0], sx[1], sx[2], false),
            _ => return Err(shape_err("conv1d", &sx, &sw)),
        };
        if sw.len() != 3 || sw[1] != cin || sw[2] == 0 {
            return Err(shape_err("conv1d", &sx, &sw));
        }
        if stride == 0 || len == 0 || len % stride != 0 {
            return Err(Error::dimension(format!(
                "conv1d: length {len} not divisible by stride {stride}"
            )));
        }
        let (cout, width) = (sw[0], sw[2]);
        let lout = len / stride;
        let idx = conv_indices(len, lout, width, stride);
        let xs = self.value(x).data();
        let ws = self.value(kernel).data();
        let kdim = cin * width;
        let mut out = vec![0.0; batch * cout * lout];
        let mut cols = vec![0.0; kdim * lout];
        for b in 0..batch {
            im2col(
                &xs[b * cin * len..(b + 1) * cin * len],
                cin,
                len,
                width,
                lout,
                &idx,
                &mut cols,
            );
            gemm(
                cout,
                kdim,
                lout,
                ws,
                false,
                &cols,
                false,
                0.0,
                &mut out[b * cout * lout..(b + 1) * cout * lout],
            );
        }
        let shape = if rank2 {
            vec![cout, lout]
        } else {
            vec![batch, cout, lout]
        };
        Ok(self.push(
            Op::Conv1d {
                x,
                w: kernel,
                stride,
            },
            Tensor::from_parts(shape, out),
        ))
    }

    /// Duplicate every entry along the last axis: `[a, b] -> [a, a, b, b]`.
    pub fn repeat2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut shape = t.shape().to_vec();
        let last = shape.pop().unwrap_or(1);
        shape.push(2 * last);
        let mut out = Vec::with_capacity(2 * t.len());
        for &v in t.data() {
            out.push(v);
            out.push(v);
        }
        self.push(Op::Repeat2(x), Tensor::from_parts(shape, out))
    }

    /// Repeat each entry along the length axis, then smooth with a width-2 periodic convolution.
    pub fn upsample2_smooth(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let r = self.repeat2(x);
        self.conv1d_periodic(r, kernel, 1)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::dimension(format!(
                "slice_cols {start}..{} out of range for shape {s:?}",
                start + len
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(
            Op::SliceCols { x, start },
            Tensor::from_parts(vec![rows, len], out),
        ))
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p)[0],
            None => return Err(Error::usage("concat_cols of nothing")),
        };
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), s));
            }
            cols += s[1];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(vec![rows, cols], out),
        ))
    }

    /// Scalar `Σ x_i²`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        self.push(Op::SumSquares(x), Tensor::scalar(s))
    }

    /// Scalar `Σ x_i`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Reverse accumulation from a scalar node.
    ///
    /// Every node at or below `seed` is visited once, in decreasing id order.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        if self.value(seed).len() != 1 {
            return Err(Error::usage(format!(
                "backward seed must be scalar, got shape {:?}",
                self.shape(seed)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; seed.0 + 1];
        adj[seed.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=seed.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let live = |v: &Var| self.nodes[v.0].grad;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                    let mut single = Gradients::default();
                    single.grads.insert(*id, t);
                    out.accumulate(&single);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                    let k = if *ta { va.shape()[0] } else { va.shape()[1] };
                    // dA = g·op(B)ᵀ (or its transpose), dB = op(A)ᵀ·g (or its transpose).
                    if live(a) {
                        let ga = acc_buf(&mut adj, *a, va.len());
                        if *ta {
                            gemm(k, n, m, vb.data(), *tb, &g, true, 1.0, ga);
                        } else {
                            gemm(m, n, k, &g, false, vb.data(), !*tb, 1.0, ga);
                        }
                    }
                    if live(b) {
                        let gb = acc_buf(&mut adj, *b, vb.len());
                        if *tb {
                            gemm(n, m, k, &g, true, va.data(), *ta, 1.0, gb);
                        } else {
                            gemm(k, m, n, va.data(), !*ta, &g, false, 1.0, gb);
                        }
                    }
                }
                Op::AddRowBias { x, bias } => {
                    let n = self.value(*bias).len();
                    if live(x) {
                        add_into(acc_buf(&mut adj, *x, g.len()), &g, 1.0);
                    }
                    if live(bias) {
                        let gb = acc_buf(&mut adj, *bias, n);
                        for row in g.chunks(n.max(1)) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::AddChannelBias { x, bias } => {
                    let s = node.value.shape();
                    let (c, l) = (s[1], s[2]);
                    if live(x) {
                        add_into(acc_buf(&mut adj, *x, g.len()), &g, 1.0);
                    }
                    if live(bias) {
                        let gb = acc_buf(&mut adj, *bias, c);
                        for (i, chunk) in g.chunks(l.max(1)).enumerate() {
                            gb[i % c] += chunk.iter().sum::<f64>();
                        }
                    }
                }
                Op::Add(a, b) => {
                    if live(a) {
                        add_into(acc_buf(&mut adj, *a, g.len()), &g, 1.0);
                    }
                    if live(b) {
                        add_into(acc_buf(&mut adj, *b, g.len()), &g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if live(a) {
                        add_into(acc_buf(&mut adj, *a, g.len()), &g, 1.0);
                    }
                    if live(b) {
                        add_into(acc_buf(&mut adj, *b, g.len()), &g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    if live(a) {
                        let ga = acc_buf(&mut adj, *a, g.len());
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(vb) {
                            *o += gi * bi;
                        }
                    }
                    if live(b) {
                        let gb = acc_buf(&mut adj, *b, g.len());
                        for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(va) {
                            *o += gi * ai;
                        }
                    }
                }
                Op::Scale(x, alpha) => add_into(acc_buf(&mut adj, *x, g.len()), &g, *alpha),
                Op::Axpy { x, y, alpha } => {
                    if live(x) {
                        add_into(acc_buf(&mut adj, *x, g.len()), &g, 1.0);
                    }
                    if live(y) {
                        add_into(acc_buf(&mut adj, *y, g.len()), &g, *alpha);
                    }
                }
                Op::Act(x, kind) => {
                    let xv = self.value(*x).data();
                    let yv = node.value.data();
                    let gx = acc_buf(&mut adj, *x, g.len());
                    for (((o, gi), &xi), &yi) in gx.iter_mut().zip(&g).zip(xv).zip(yv) {
                        *o += gi * kind.derivative_from_output(xi, yi);
                    }
                }
                Op::ActDeriv(x, kind) => {
                    let xv = self.value(*x).data();
                    let gx = acc_buf(&mut adj, *x, g.len());
                    for ((o, gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *o += gi * kind.second_derivative(xi);
                    }
                }
                Op::ActDerivOut { x, y, kind } => {
                    let xv = self.value(*x).data();
                    let yv = self.value(*y).data();
                    let gx = acc_buf(&mut adj, *x, g.len());
                    for (((o, gi), &xi), &yi) in gx.iter_mut().zip(&g).zip(xv).zip(yv) {
                        *o += gi * kind.second_derivative_from_output(xi, yi);
                    }
                }
                Op::Conv1d { x, w, stride } => {
                    self.conv1d_backward(&mut adj, &g, *x, *w, *stride, node.value.shape());
                }
                Op::Repeat2(x) => {
                    let gx = acc_buf(&mut adj, *x, g.len() / 2);
                    for (o, pair) in gx.iter_mut().zip(g.chunks(2)) {
                        *o += pair[0] + pair[1];
                    }
                }
                Op::Reshape(x) => add_into(acc_buf(&mut adj, *x, g.len()), &g, 1.0),
                Op::SliceCols { x, start } => {
                    let sx = self.shape(*x);
                    let (rows, cols) = (sx[0], sx[1]);
                    let len = node.value.shape()[1];
                    let gx = acc_buf(&mut adj, *x, rows * cols);
                    for r in 0..rows {
                        for c in 0..len {
                            gx[r * cols + start + c] += g[r * len + c];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let cols = node.value.shape()[1];
                    let rows = node.value.shape()[0];
                    let mut offset = 0;
                    for p in parts {
                        let c = self.shape(*p)[1];
                        if live(p) {
                            let gp = acc_buf(&mut adj, *p, rows * c);
                            for r in 0..rows {
                                for j in 0..c {
                                    gp[r * c + j] += g[r * cols + offset + j];
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x).data();
                    let gx = acc_buf(&mut adj, *x, xv.len());
                    for (o, &xi) in gx.iter_mut().zip(xv) {
                        *o += 2.0 * xi * g[0];
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    for o in acc_buf(&mut adj, *x, n).iter_mut() {
                        *o += g[0];
                    }
                }
            }
        }
        Ok(out)
    }

    fn conv1d_backward(
        &self,
        adj: &mut [Option<Vec<f64>>],
        g: &[f64],
        x: Var,
        w: Var,
        stride: usize,
        out_shape: &[usize],
    ) {
        let sx = self.shape(x);
        let (batch, cin, len) = if sx.len() == 2 {
            (1, sx[0], sx[1])
        } else {
            (sx[0], sx[1], sx[2])
        };
        let sw = self.shape(w);
        let (cout, width) = (sw[0], sw[2]);
        let lout = *out_shape.last().unwrap();
        let idx = conv_indices(len, lout, width, stride);
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let kdim = cin * width;
        let mut cols = vec![0.0; kdim * lout];
        if self.nodes[w.0].grad {
            let gw = acc_buf(adj, w, ws.len());
            for b in 0..batch {
                let gb = &g[b * cout * lout..(b + 1) * cout * lout];
                im2col(
                    &xs[b * cin * len..(b + 1) * cin * len],
                    cin,
                    len,
                    width,
                    lout,
                    &idx,
                    &mut cols,
                );
                gemm(cout, lout, kdim, gb, false, &cols, true, 1.0, gw);
            }
        }
        if !self.nodes[x.0].grad {
            return;
        }
        let gx = acc_buf(adj, x, xs.len());
        for b in 0..batch {
            let gb = &g[b * cout * lout..(b + 1) * cout * lout];
            gemm(kdim, cout, lout, ws, true, gb, false, 0.0, &mut cols);
            let gxb = &mut gx[b * cin * len..(b + 1) * cin * len];
            for ci in 0..cin {
                let gxrow = &mut gxb[ci * len..(ci + 1) * len];
                for j in 0..width {
                    let crow = &cols[(ci * width + j) * lout..(ci * width + j + 1) * lout];
                    for (&c, &ix) in crow.iter().zip(&idx[j * lout..(j + 1) * lout]) {
                        gxrow[ix] += c;
                    }
                }
            }
        }
    }
}

/// Unfold one sample `(cin, len)` into a row-major `(cin·width, lout)` matrix.
fn im2col(
    x: &[f64],
    cin: usize,
    len: usize,
    width: usize,
    lout: usize,
    idx: &[usize],
    cols: &mut [f64],
) {
    for ci in 0..cin {
        let xrow = &x[ci * len..(ci + 1) * len];
        for j in 0..width {
            let crow = &mut cols[(ci * width + j) * lout..(ci * width + j + 1) * lout];
            for (c, &ix) in crow.iter_mut().zip(&idx[j * lout..(j + 1) * lout]) {
                *c = xrow[ix];
            }
        }
    }
}

/// Flattened `(width, lout)` table of input indices read by each output position.
fn conv_indices(len: usize, lout: usize, width: usize, stride: usize) -> Vec<usize> {
    let start = -(((width - 1) / 2) as isize);
    let len_i = len as isize;
    let mut idx = Vec::with_capacity(width * lout);
    for j in 0..width {
        for l in 0..lout {
            let i = (l * stride) as isize + start + j as isize;
            idx.push(i.rem_euclid(len_i) as usize);
        }
    }
    idx
}

fn acc_buf(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
