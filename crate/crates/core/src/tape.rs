//! Reverse-mode automatic differentiation over a fixed op set.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes once in reverse and applies one backward rule per op.
//! Inputs always precede outputs, so the node order is a topological order.
//!
//! Broadcasting is limited to [`Tape::add_bias`], which adds a vector over
//! all leading axes. Every other binary op requires equal shapes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ops;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Probability floor used by [`Tape::nll`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
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
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    GatherRows {
        table: usize,
        rows: Vec<usize>,
    },
    MeanRows(usize),
    Sum(usize),
    Nll {
        probs: usize,
        labels: Vec<usize>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. One tape per forward pass; tapes are not shared
/// between threads.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: usize) -> &[f64] {
        self.nodes[v].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = ops::matmul(self.data(a.0), self.data(b.0), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a.0, b.0), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let out = ops::transpose(self.data(a.0), r, c);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(a.0), needs))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `x + bias`, with `bias` (a vector over the last axis of `x`)
    /// broadcast over every leading axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != sb.first() {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let d = sb[0];
        let b = self.data(bias.0);
        let out: Vec<f64> = self
            .data(x.0)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % d])
            .collect();
        let shape = sx.to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBias(x.0, bias.0), needs))
    }

    /// `factor * x + offset`.
    pub fn affine(&mut self, x: Var, factor: f64, offset: f64) -> Var {
        let out: Vec<f64> = self
            .data(x.0)
            .iter()
            .map(|&v| factor * v + offset)
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(&shape, out).expect("same shape"),
            Op::Scale(x.0, factor),
            needs,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(x.0).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(&shape, out).expect("same shape"), op, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, math::tanh, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, math::sigmoid, Op::Sigmoid(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x.0))
    }

    /// Softmax along `axis`, stabilized by subtracting the maximum.
    ///
    /// Entries equal to `-inf` get weight exactly zero. A slice whose
    /// entries are all `-inf` puts all of its weight on index 0.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", &shape, &[axis]));
        }
        let (outer, n, inner) = ops::axis_split(&shape, axis);
        let src = self.data(x.0);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for k in 0..inner {
                let at = |i: usize| o * n * inner + i * inner + k;
                let max = (0..n).map(|i| src[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    out[at(0)] = 1.0;
                    continue;
                }
                let mut total = 0.0;
                for i in 0..n {
                    let e = math::exp(src[at(i)] - max);
                    out[at(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    out[at(i)] /= total;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Softmax { x: x.0, axis },
            needs,
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(Error::param("concat of zero tensors")),
        };
        if axis >= first.len() {
            return Err(Error::dim("concat", &first, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = ops::axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let block = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.data(v.0)[o * block..(o + 1) * block]);
            }
        }
        let needs = inputs.iter().any(|v| self.needs(*v));
        let op = Op::Concat {
            inputs: inputs.iter().map(|v| v.0).collect(),
            axis,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, needs))
    }

    /// `len` entries of `x` along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("slice", &shape, &[axis, start, len]));
        }
        let (outer, n, inner) = ops::axis_split(&shape, axis);
        let src = self.data(x.0);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let needs = self.needs(x);
        let op = Op::Slice {
            x: x.0,
            axis,
            start,
        };
        Ok(self.push(Tensor::new(&new_shape, out)?, op, needs))
    }

    /// Splits `x` along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let extent = self.shape(x).get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != extent {
            return Err(Error::dim("split", self.shape(x), sizes));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &s in sizes {
            parts.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(parts)
    }

    /// Rows of a 2-D `table`, in the given order (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || rows.is_empty() {
            return Err(Error::dim("gather_rows", s, &[rows.len()]));
        }
        let (r, c) = (s[0], s[1]);
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::data(format!(
                "row {bad} out of range for table with {r} rows"
            )));
        }
        let src = self.data(table.0);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let needs = self.needs(table);
        let op = Op::GatherRows {
            table: table.0,
            rows: rows.to_vec(),
        };
        Ok(self.push(Tensor::new(&[rows.len(), c], out)?, op, needs))
    }

    /// Column means of a 2-D tensor, shape `1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("mean_rows", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.data(x.0);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&[1, c], out)?, Op::MeanRows(x.0), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.data(x.0).iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x.0), needs)
    }

    /// Mean negative log-likelihood of `labels` under the row distributions
    /// in `probs` (`r×K`, or a length-`K` vector for one row). Probabilities
    /// are floored at [`PROB_FLOOR`].
    pub fn nll(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k) = self.value(probs).as_matrix_dims();
        if labels.len() != rows {
            return Err(Error::dim("nll", self.shape(probs), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::data(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let p = self.data(probs.0);
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -math::ln(p[r * k + l].max(PROB_FLOOR)))
            .sum();
        let needs = self.needs(probs);
        let op = Op::Nll {
            probs: probs.0,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(total / rows as f64), op, needs))
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// (biased) variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::param("layer_norm eps must be positive"));
        }
        let sx = self.shape(x).to_vec();
        let d = *sx.last().expect("non-empty shape");
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", &sx, self.shape(gain)));
        }
        let src = self.data(x.0);
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            rstd[r] = inv;
            for (h, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
        }
        let (g, b) = (self.data(gain.0), self.data(bias.0));
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| h * g[i % d] + b[i % d])
            .collect();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let op = Op::LayerNorm {
            x: x.0,
            gain: gain.0,
            bias: bias.0,
            xhat,
            rstd,
        };
        Ok(self.push(Tensor::new(&sx, out)?, op, needs))
    }

    /// Inverted dropout: each element survives with probability `1 - p` and
    /// is scaled by `1 / (1 - p)`. Identity when `training` is false or
    /// `p == 0`, in which case no random numbers are drawn.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        rng: &mut RandomSource,
        training: bool,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self
            .data(x.0)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Dropout { x: x.0, mask },
            needs,
        ))
    }

    /// Gradients of the single-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backward_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |target: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[target].needs_grad {
                return;
            }
            let slot = grads[target].get_or_insert_with(|| vec![0.0; nodes[target].value.len()]);
            f(slot);
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
                acc(*a, &mut |ga| ops::acc_matmul_bt(ga, g, bd, m, k, n));
                acc(*b, &mut |gb| ops::acc_matmul_at(gb, ad, g, m, k, n));
            }
            Op::Transpose(a) => {
                let s = nodes[i].value.shape();
                let t = ops::transpose(g, s[0], s[1]);
                acc(*a, &mut |ga| add_into(ga, &t));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
                acc(*a, &mut |ga| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gv * av;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let d = nodes[*b].value.len();
                acc(*b, &mut |gb| {
                    for (idx, gv) in g.iter().enumerate() {
                        gb[idx % d] += gv;
                    }
                });
            }
            Op::Scale(x, factor) => acc(*x, &mut |gx| {
                for (o, gv) in gx.iter_mut().zip(g) {
                    *o += factor * gv;
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * y * (1.0 - y);
                }
            }),
            Op::Relu(x) => {
                let xd = nodes[*x].value.data();
                acc(*x, &mut |gx| {
                    for ((o, gv), v) in gx.iter_mut().zip(g).zip(xd) {
                        if *v > 0.0 {
                            *o += gv;
                        }
                    }
                })
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = ops::axis_split(nodes[i].value.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for k in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + k;
                            let dot: f64 = (0..n).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                })
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = ops::axis_split(nodes[i].value.shape(), *axis);
                let total = nodes[i].value.shape()[*axis] * inner;
                let mut offset = 0;
                for &inp in inputs {
                    let block = nodes[inp].value.shape()[*axis] * inner;
                    acc(inp, &mut |gi| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            add_into(&mut gi[o * block..(o + 1) * block], src);
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = ops::axis_split(nodes[*x].value.shape(), *axis);
                let len = nodes[i].value.shape()[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        add_into(&mut gx[base..base + len * inner], src);
                    }
                });
            }
            Op::GatherRows { table, rows } => {
                let c = nodes[*table].value.shape()[1];
                acc(*table, &mut |gt| {
                    for (r, &row) in rows.iter().enumerate() {
                        add_into(&mut gt[row * c..(row + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::MeanRows(x) => {
                let s = nodes[*x].value.shape();
                let (r, c) = (s[0], s[1]);
                acc(*x, &mut |gx| {
                    for row in 0..r {
                        for (o, gv) in gx[row * c..(row + 1) * c].iter_mut().zip(g) {
                            *o += gv / r as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Nll { probs, labels } => {
                let (rows, k) = nodes[*probs].value.as_matrix_dims();
                let p = nodes[*probs].value.data();
                acc(*probs, &mut |gp| {
                    for (r, &l) in labels.iter().enumerate() {
                        let v = p[r * k + l];
                        if v > PROB_FLOOR {
                            gp[r * k + l] -= g[0] / (v * rows as f64);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = nodes[*gain].value.len();
                let gd = nodes[*gain].value.data();
                acc(*gain, &mut |gg| {
                    for (idx, gv) in g.iter().enumerate() {
                        gg[idx % d] += gv * xhat[idx];
                    }
                });
                acc(*bias, &mut |gb| {
                    for (idx, gv) in g.iter().enumerate() {
                        gb[idx % d] += gv;
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, inv) in rstd.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let gh: Vec<f64> =
                            g[span.clone()].iter().zip(gd).map(|(a, b)| a * b).collect();
                        let h = &xhat[span.clone()];
                        let mean_gh = gh.iter().sum::<f64>() / d as f64;
                        let mean_ghh = gh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((o, ghv), hv) in gx[span].iter_mut().zip(&gh).zip(h) {
                            *o += inv * (ghv - mean_gh - hv * mean_ghh);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for ((o, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gv * m;
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
