//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every operation appends one node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and applies the chain rule. A tape is a single
//! training context: it is `Send` but not shared.

use super::tensor::{
    axis_extents, col2im, im2col, matmul_nn, matmul_nt, matmul_tn, softmax_in_place, ConvGeom,
    Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddChannel(Var, Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var },
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceFlat { x: Var, start: usize },
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    Embedding { table: Var, indices: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::AddChannel(..) => "add_channel",
            Op::Gelu(..) => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceFlat { .. } => "slice_flat",
            Op::Conv2d { .. } => "conv2d",
            Op::Embedding { .. } => "embedding",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::AddChannel(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Gelu(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Softmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::SliceCols { x, .. }
            | Op::SliceFlat { x, .. } => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::Embedding { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
    /// Forward intermediates reused by the backward rule.
    saved: Vec<f64>,
}

/// One recorded step: operation name, input node ids, output node id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordEntry {
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

/// Ordered replay list for the chain rule.
#[derive(Clone, Debug, Default)]
pub struct ComputationRecord {
    pub entries: Vec<RecordEntry>,
}

impl ComputationRecord {
    /// Every input id precedes the id of the node it feeds.
    pub fn is_topological(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.inputs.iter().all(|&i| i < e.output))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_tanh(x: f64) -> f64 {
    (GELU_C * (x + GELU_A * x * x * x)).tanh()
}

/// Derivative given the input and its cached `tanh` term.
fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
            saved: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if `backward` has reached this node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn record(&self) -> ComputationRecord {
        ComputationRecord {
            entries: self
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| !matches!(n.op, Op::Leaf))
                .map(|(i, n)| RecordEntry {
                    op: n.op.name(),
                    inputs: n.op.inputs().iter().map(|v| v.0).collect(),
                    output: i,
                })
                .collect(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, saved: Vec<f64>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), Vec::new()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), Vec::new()))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), Vec::new()))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), Vec::new())
    }

    /// Adds the constant `c` to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Shift(a), Vec::new())
    }

    fn row_operands(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (m, n) = self.value(a).dims2(op)?;
        if self.shape(b) != [n] {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok((m, n))
    }

    /// Adds vector `b[n]` to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.row_operands("add_row", a, b)?;
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += bv[i % n];
        }
        Ok(self.push(out, Op::AddRow(a, b), Vec::new()))
    }

    /// Multiplies every row of `a[m×n]` elementwise by `b[n]`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.row_operands("mul_row", a, b)?;
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x *= bv[i % n];
        }
        Ok(self.push(out, Op::MulRow(a, b), Vec::new()))
    }

    /// Adds per-channel bias `b[C]` to `a[C×H×W]`.
    pub fn add_channel(&mut self, a: Var, b: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3("add_channel")?;
        if self.shape(b) != [c] {
            return Err(Error::shape("add_channel", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b).data();
        let mut out = self.value(a).clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += bv[i / (h * w)];
        }
        Ok(self.push(out, Op::AddChannel(a, b), Vec::new()))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t: Vec<f64> = x.data().iter().map(|&v| gelu_tanh(v)).collect();
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(&t).map(|(&v, &tv)| 0.5 * v * (1.0 + tv)).collect(),
        );
        self.push(out, Op::Gelu(a), t)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.value(x).softmax(axis)?;
        Ok(self.push(out, Op::Softmax { x, axis }, Vec::new()))
    }

    /// Normalizes each row of `x[m×n]` to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(x).dims2("layer_norm")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * r;
            }
        }
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(out, Op::LayerNorm { x }, rstd))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), Vec::new()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), Vec::new()))
    }

    /// Columns `start..start+len` of `x[m×n]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2("slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let out = Tensor::from_parts(vec![m, len], out);
        Ok(self.push(out, Op::SliceCols { x, start }, Vec::new()))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (m, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_cols")?;
            if pm != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![m, total], out);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), Vec::new()))
    }

    /// Flat elements `start..start+len` of `x`, reshaped to `shape`.
    pub fn slice_flat(&mut self, x: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let total = self.value(x).len();
        if len == 0 || start + len > total {
            return Err(Error::invalid(format!(
                "slice_flat {start}..{} out of range for {total} elements",
                start + len
            )));
        }
        let out = Tensor::from_parts(
            shape.to_vec(),
            self.value(x).data()[start..start + len].to_vec(),
        );
        Ok(self.push(out, Op::SliceFlat { x, start }, Vec::new()))
    }

    /// Cross-correlation of `x[C×H×W]` with `k[F×C×kh×kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (geom, f) = ConvGeom::new(self.shape(x), self.shape(k), stride, pad)?;
        let cols = im2col(self.value(x).data(), &geom);
        let mut out = vec![0.0; f * geom.col_cols()];
        matmul_nn(
            self.value(k).data(),
            &cols,
            &mut out,
            f,
            geom.col_rows(),
            geom.col_cols(),
        );
        let out = Tensor::from_parts(vec![f, geom.oh, geom.ow], out);
        Ok(self.push(out, Op::Conv2d { x, k, geom }, cols))
    }

    /// Rows of `table[V×d]` selected by `indices`, as `[len×d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2("embedding")?;
        if indices.is_empty() {
            return Err(Error::invalid("embedding lookup of zero indices"));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::Index { index: i, size: v });
            }
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_parts(vec![indices.len(), d], out);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            Vec::new(),
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    ///
    /// `logits` is `[V]` (one target) or `[R×V]` (one target per row).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, v) = match self.shape(logits) {
            &[v] => (1, v),
            &[r, v] => (r, v),
            s => return Err(Error::shape("cross_entropy", s, &[targets.len(), 0])),
        };
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let mut probs = self.value(logits).data().to_vec();
        softmax_in_place(&mut probs, &[rows, v], 1);
        let lv = self.value(logits).data();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Index { index: t, size: v });
            }
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let out = Tensor::scalar(loss / rows as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            probs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), Vec::new())
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(out, Op::Mean(a), Vec::new())
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    ///
    /// Gradients add onto whatever earlier calls left behind; use
    /// [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        // Adds `f(buffer)` into the gradient slot of `v`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !needs(v) {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                acc(*a, &mut |s| matmul_nt(g, val(*b), s, m, n, k));
                acc(*b, &mut |s| matmul_tn(val(*a), g, s, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::Shift(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::AddRow(a, b) => {
                let n = self.shape(*b)[0];
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| {
                    for (i, y) in g.iter().enumerate() {
                        s[i % n] += y;
                    }
                });
            }
            Op::MulRow(a, b) => {
                let n = self.shape(*b)[0];
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for (i, y) in g.iter().enumerate() {
                        s[i] += y * bv[i % n];
                    }
                });
                acc(*b, &mut |s| {
                    for (i, y) in g.iter().enumerate() {
                        s[i % n] += y * av[i];
                    }
                });
            }
            Op::AddChannel(a, b) => {
                let plane = self.shape(*a)[1] * self.shape(*a)[2];
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| {
                    for (i, y) in g.iter().enumerate() {
                        s[i / plane] += y;
                    }
                });
            }
            Op::Gelu(a) => {
                let av = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * gelu_grad(av[i], node.saved[i]);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let p = node.value.data();
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len)
                                .map(|j| g[base + j * inner] * p[base + j * inner])
                                .sum();
                            for j in 0..len {
                                let q = base + j * inner;
                                s[q] += p[q] * (g[q] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, .. } => {
                let y = node.value.data();
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let rstd = &node.saved;
                acc(*x, &mut |s| {
                    for i in 0..m {
                        let gy = &g[i * n..(i + 1) * n];
                        let yr = &y[i * n..(i + 1) * n];
                        let mean_g = gy.iter().sum::<f64>() / n as f64;
                        let mean_gy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            s[i * n + j] += rstd[i] * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc(*a, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::SliceCols { x, start } => {
                let n = self.shape(*x)[1];
                let (m, len) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*x, &mut |s| {
                    for i in 0..m {
                        for j in 0..len {
                            s[i * n + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    acc(p, &mut |s| {
                        for i in 0..m {
                            for j in 0..w {
                                s[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceFlat { x, start } => {
                acc(*x, &mut |s| {
                    s[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b)
                });
            }
            Op::Conv2d { x, k, geom } => {
                let f = self.shape(*k)[0];
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                acc(*k, &mut |s| matmul_nt(g, &node.saved, s, f, cols, rows));
                acc(*x, &mut |s| {
                    let mut dcols = vec![0.0; rows * cols];
                    matmul_tn(val(*k), g, &mut dcols, f, rows, cols);
                    col2im(&dcols, geom, s);
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                acc(*table, &mut |s| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            s[i * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let rows = targets.len();
                let v = node.saved.len() / rows;
                let scale = g[0] / rows as f64;
                acc(*logits, &mut |s| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            s[r * v + j] += scale * (node.saved[r * v + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }
}
