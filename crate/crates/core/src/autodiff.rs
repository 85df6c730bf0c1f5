//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output value. Nodes only ever reference earlier nodes, so the recording
//! order is a topological order and [`Tape::backward`] is a single reverse
//! sweep. One tape is built per training step and dropped afterwards.
//!
//! The operator set is deliberately small: exactly what the codec's
//! convolutional autoencoders, soft quantizers and loss need.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var },
    Tanh(Var),
    LeakyRelu { input: Var, slope: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ConcatChannels(Var, Var),
    Reshape(Var),
    Similarity { x: Var, centers: Var },
    SoftmaxRows(Var),
    RowsDot { rows: Var, weights: Var },
    ColMean(Var),
    EntropyBits(Var),
    Sum(Var),
    SumSquaredError(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv1d { input, weight, bias } => vec![input, weight, bias],
            Op::Tanh(a)
            | Op::LeakyRelu { input: a, .. }
            | Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::SoftmaxRows(a)
            | Op::ColMean(a)
            | Op::EntropyBits(a)
            | Op::Sum(a) => vec![a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::ConcatChannels(a, b) | Op::SumSquaredError(a, b) => vec![a, b],
            Op::Similarity { x, centers } => vec![x, centers],
            Op::RowsDot { rows, weights } => vec![rows, weights],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward sweep, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, like: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => *slot = Some(grad),
    }
}

/// Valid output range `[lo, hi)` for a tap offset `off` over length `t`.
#[inline]
fn tap_range(off: isize, t: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (t as isize - off).clamp(0, t as isize) as usize;
    (lo, hi.max(lo))
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Stride-1 "same" convolution with zero padding of `(K-1)/2` per side.
    ///
    /// `input` is `[C_in, T]`, `weight` is `[C_out, C_in, K]`, `bias` is `[C_out]`.
    pub fn conv1d_same(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[c_in, t], &[c_out, w_in, k]) = (x.shape(), w.shape()) else {
            return Err(Error::shape(format!(
                "conv1d: input {:?} must be [C_in, T] and weight {:?} [C_out, C_in, K]",
                x.shape(),
                w.shape()
            )));
        };
        if c_in != w_in {
            return Err(Error::shape(format!("conv1d: input has {c_in} channels, weight expects {w_in}")));
        }
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv1d: kernel size {k} must be odd")));
        }
        if b.shape() != [c_out] {
            return Err(Error::shape(format!("conv1d: bias {:?} must be [{c_out}]", b.shape())));
        }
        let pad = (k / 2) as isize;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; c_out * t];
        for (c, row) in out.chunks_exact_mut(t).enumerate() {
            row.fill(bd[c]);
            for i in 0..c_in {
                let xrow = &xd[i * t..(i + 1) * t];
                let taps = &wd[(c * c_in + i) * k..(c * c_in + i + 1) * k];
                for (kk, &wv) in taps.iter().enumerate() {
                    let off = kk as isize - pad;
                    let (lo, hi) = tap_range(off, t);
                    let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (o, &s) in row[lo..hi].iter_mut().zip(src) {
                        *o += wv * s;
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, t], out)?;
        Ok(self.push(value, Op::Conv1d { input, weight, bias }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(value, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let data = self.value(x).data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(value, Op::LeakyRelu { input: x, slope })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(value, Op::Scale(x, factor))
    }

    /// Concatenate `[C1, T]` and `[C2, T]` into `[C1 + C2, T]`, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[c1, t1], &[c2, t2]) = (ta.shape(), tb.shape()) else {
            return Err(Error::shape("concat: operands must be [C, T]"));
        };
        if t1 != t2 {
            return Err(Error::shape(format!("concat: lengths {t1} and {t2} differ")));
        }
        let mut data = Vec::with_capacity((c1 + c2) * t1);
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::new(vec![c1 + c2, t1], data)?;
        Ok(self.push(value, Op::ConcatChannels(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// `S[i, j] = -|x_i - mu_j|` over all elements of `x`; output `[N, J]`.
    pub fn similarity(&mut self, x: Var, centers: Var) -> Var {
        let value = similarity_matrix(self.value(x).data(), self.value(centers).data());
        self.push(value, Op::Similarity { x, centers })
    }

    /// Row-wise softmax of an `[N, J]` matrix, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[_, j] = t.shape() else {
            return Err(Error::shape("softmax_rows: input must be [N, J]"));
        };
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(j) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    /// `out[i] = sum_j rows[i, j] * weights[j]`; output `[N]`.
    pub fn rows_dot(&mut self, rows: Var, weights: Var) -> Result<Var> {
        let (r, w) = (self.value(rows), self.value(weights));
        let &[n, j] = r.shape() else {
            return Err(Error::shape("rows_dot: rows must be [N, J]"));
        };
        if w.numel() != j {
            return Err(Error::shape(format!("rows_dot: {j} columns vs {} weights", w.numel())));
        }
        let wd = w.data();
        let data = r.data().chunks_exact(j).map(|row| row.iter().zip(wd).map(|(p, m)| p * m).sum()).collect();
        let value = Tensor::new(vec![n], data)?;
        Ok(self.push(value, Op::RowsDot { rows, weights }))
    }

    /// Column means of an `[N, J]` matrix; output `[J]`.
    pub fn col_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[n, j] = t.shape() else {
            return Err(Error::shape("col_mean: input must be [N, J]"));
        };
        let mut data = vec![0.0; j];
        for row in t.data().chunks_exact(j) {
            for (acc, v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let inv = 1.0 / n.max(1) as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![j], data)?;
        Ok(self.push(value, Op::ColMean(x)))
    }

    /// Shannon entropy in bits of a probability vector, with `0 log 0 = 0`.
    pub fn entropy_bits(&mut self, p: Var) -> Var {
        let h = entropy_bits(self.value(p).data());
        self.push(Tensor::scalar(h), Op::EntropyBits(p))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `sum((a - b)^2)` as a scalar.
    pub fn sum_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sum_squared_error", ta, tb)?;
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push(Tensor::scalar(s), Op::SumSquaredError(a, b)))
    }

    /// Gradients of a scalar `loss` with respect to every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.value(loss);
        if !value.is_scalar() {
            return Err(Error::shape(format!("backward: loss must be scalar, got shape {:?}", value.shape())));
        }
        self.backward_seeded(&[(loss, Tensor::full(value.shape(), 1.0))])
    }

    /// Reverse sweep starting from arbitrary upstream gradients.
    ///
    /// Equivalent to backpropagating `sum_k <seed_k, node_k>`; used when a loss
    /// term couples several tapes (batch entropy) and its gradient is computed
    /// outside of them.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (var, seed) in seeds {
            same_shape("backward seed", self.value(*var), seed)?;
            accumulate(&mut grads[var.0], seed.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match node.op {
            Op::Leaf => {}
            Op::Conv1d { input, weight, bias } => {
                let (x, w) = (self.value(input), self.value(weight));
                let (c_in, t) = (x.shape()[0], x.shape()[1]);
                let (c_out, k) = (w.shape()[0], w.shape()[2]);
                let pad = (k / 2) as isize;
                let (xd, wd) = (x.data(), w.data());
                if self.wants(bias) {
                    let gb = gd.chunks_exact(t).map(|row| row.iter().sum()).collect();
                    accumulate(&mut grads[bias.0], Tensor::vector(gb));
                }
                if self.wants(weight) {
                    let mut gw = vec![0.0; c_out * c_in * k];
                    for c in 0..c_out {
                        let grow = &gd[c * t..(c + 1) * t];
                        for i in 0..c_in {
                            let xrow = &xd[i * t..(i + 1) * t];
                            for kk in 0..k {
                                let off = kk as isize - pad;
                                let (lo, hi) = tap_range(off, t);
                                let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                gw[(c * c_in + i) * k + kk] = grow[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum();
                            }
                        }
                    }
                    accumulate(&mut grads[weight.0], Tensor::new(w.shape().to_vec(), gw).unwrap());
                }
                if self.wants(input) {
                    let mut gx = vec![0.0; c_in * t];
                    for c in 0..c_out {
                        let grow = &gd[c * t..(c + 1) * t];
                        for i in 0..c_in {
                            let dst_row = &mut gx[i * t..(i + 1) * t];
                            for kk in 0..k {
                                let wv = wd[(c * c_in + i) * k + kk];
                                let off = kk as isize - pad;
                                let (lo, hi) = tap_range(off, t);
                                let dst = &mut dst_row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                for (d, &gv) in dst.iter_mut().zip(&grow[lo..hi]) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), gx).unwrap());
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let data = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::LeakyRelu { input, slope } => {
                let xv = self.value(input).data();
                let data = gd.iter().zip(xv).map(|(&g, &x)| if x > 0.0 { g } else { slope * g }).collect();
                accumulate(&mut grads[input.0], Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    let data = gd.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], Tensor::new(g.shape().to_vec(), data).unwrap());
                }
            }
            Op::Scale(x, factor) => {
                let data = gd.iter().map(|v| v * factor).collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::ConcatChannels(a, b) => {
                let split = self.value(a).numel();
                if self.wants(a) {
                    let ga = Tensor::new(self.value(a).shape().to_vec(), gd[..split].to_vec());
                    accumulate(&mut grads[a.0], ga.unwrap());
                }
                if self.wants(b) {
                    let gb = Tensor::new(self.value(b).shape().to_vec(), gd[split..].to_vec());
                    accumulate(&mut grads[b.0], gb.unwrap());
                }
            }
            Op::Reshape(x) => {
                let reshaped = g.clone().reshape(self.value(x).shape()).unwrap();
                accumulate(&mut grads[x.0], reshaped);
            }
            Op::Similarity { x, centers } => {
                let (xv, mv) = (self.value(x).data(), self.value(centers).data());
                let j = mv.len();
                let mut gx = vec![0.0; xv.len()];
                let mut gm = vec![0.0; j];
                for (i, (&xi, grow)) in xv.iter().zip(gd.chunks_exact(j)).enumerate() {
                    for (jj, (&m, &gv)) in mv.iter().zip(grow).enumerate() {
                        // d/dx of -|x - m| is -sign(x - m); zero at the kink.
                        let s = sign(xi - m);
                        gx[i] -= s * gv;
                        gm[jj] += s * gv;
                    }
                }
                if self.wants(x) {
                    let t = Tensor::new(self.value(x).shape().to_vec(), gx).unwrap();
                    accumulate(&mut grads[x.0], t);
                }
                if self.wants(centers) {
                    let t = Tensor::new(self.value(centers).shape().to_vec(), gm).unwrap();
                    accumulate(&mut grads[centers.0], t);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let j = node.value.shape()[1];
                let mut data = vec![0.0; y.len()];
                for ((out, yr), gr) in data.chunks_exact_mut(j).zip(y.chunks_exact(j)).zip(gd.chunks_exact(j)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(&mut grads[x.0], Tensor::new(node.value.shape().to_vec(), data).unwrap());
            }
            Op::RowsDot { rows, weights } => {
                let (r, w) = (self.value(rows), self.value(weights));
                let j = w.numel();
                if self.wants(rows) {
                    let mut data = vec![0.0; r.numel()];
                    for (out, &gv) in data.chunks_exact_mut(j).zip(gd) {
                        for (o, &m) in out.iter_mut().zip(w.data()) {
                            *o = gv * m;
                        }
                    }
                    accumulate(&mut grads[rows.0], Tensor::new(r.shape().to_vec(), data).unwrap());
                }
                if self.wants(weights) {
                    let mut data = vec![0.0; j];
                    for (row, &gv) in r.data().chunks_exact(j).zip(gd) {
                        for (acc, p) in data.iter_mut().zip(row) {
                            *acc += gv * p;
                        }
                    }
                    accumulate(&mut grads[weights.0], Tensor::new(w.shape().to_vec(), data).unwrap());
                }
            }
            Op::ColMean(x) => {
                let t = self.value(x);
                let n = t.shape()[0].max(1) as f64;
                let mut data = Vec::with_capacity(t.numel());
                for _ in 0..t.shape()[0] {
                    data.extend(gd.iter().map(|v| v / n));
                }
                accumulate(&mut grads[x.0], Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::EntropyBits(p) => {
                let gs = g.item();
                let data = self.value(p).data().iter().map(|&pv| gs * entropy_grad(pv)).collect();
                accumulate(&mut grads[p.0], Tensor::new(self.value(p).shape().to_vec(), data).unwrap());
            }
            Op::Sum(x) => {
                let t = Tensor::full(self.value(x).shape(), g.item());
                accumulate(&mut grads[x.0], t);
            }
            Op::SumSquaredError(a, b) => {
                let gs = g.item();
                let (ta, tb) = (self.value(a), self.value(b));
                let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| 2.0 * gs * (x - y)).collect();
                if self.wants(b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], Tensor::new(tb.shape().to_vec(), neg).unwrap());
                }
                if self.wants(a) {
                    accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), diff).unwrap());
                }
            }
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dense `[N, J]` similarity matrix `-|x_i - mu_j|`.
pub fn similarity_matrix(x: &[f64], centers: &[f64]) -> Tensor {
    let mut data = Vec::with_capacity(x.len() * centers.len());
    for &xi in x {
        data.extend(centers.iter().map(|&m| -(xi - m).abs()));
    }
    Tensor::new(vec![x.len(), centers.len()], data).unwrap()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `-sum p log2 p`, skipping zero entries.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum::<f64>()
}

/// `d/dp (-p log2 p)`; zero at `p = 0` where the term is defined as 0.
pub fn entropy_grad(p: f64) -> f64 {
    if p > 0.0 {
        -(p.ln() + 1.0) / LN_2
    } else {
        0.0
    }
}

/// Central finite-difference gradient check.
///
/// Builds `f` on a fresh tape at `point`, differentiates it, and compares
/// against `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate.
/// Returns `max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-12)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get_or_zeros(x, point.shape());

    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / (numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn conv(input: Vec<f64>, weight: Vec<f64>, k: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::signal(input));
        let w = tape.constant(Tensor::new(vec![1, 1, k], weight).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.conv1d_same(x, w, b).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn conv_identity_kernel() {
        assert_eq!(conv(vec![1.0, 2.0, 3.0], vec![1.0], 1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_box_kernel_zero_padded() {
        assert_eq!(conv(vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 3], 3), vec![3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 8]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv1d_same(x, w, b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_bias_gradient_is_length() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 5], (0..10).map(f64::from).collect()).unwrap());
        let w = tape.constant(Tensor::full(&[3, 2, 3], 0.3));
        let b = tape.param(Tensor::zeros(&[3]));
        let y = tape.conv1d_same(x, w, b).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn tanh_values_and_gradient_at_origin() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, -10.0, 10.0]));
        let y = tape.tanh(x);
        assert_abs_diff_eq!(tape.value(y).data()[0], 0.0);
        assert_abs_diff_eq!(tape.value(y).data()[1], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(tape.value(y).data()[2], 1.0, epsilon = 1e-8);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_abs_diff_eq!(g.get(x).unwrap().data()[0], 1.0);
    }

    #[test]
    fn tanh_finite_difference() {
        let err = finite_diff_check(
            |t, x| {
                let y = t.tanh(x);
                Ok(t.sum(y))
            },
            &Tensor::vector(vec![0.3]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softmax_uniform_and_stabilized() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 4], vec![0.0, 0.0, 0.0, 0.0, 1000.0, 0.0, 0.0, 0.0]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        let d = tape.value(y).data();
        assert_eq!(&d[..4], &[0.25; 4]);
        assert_abs_diff_eq!(d[4], 1.0);
        assert_abs_diff_eq!(d[5], 0.0);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        // Probe every output coordinate with a weighted sum.
        for probe in 0..2 {
            let err = finite_diff_check(
                |t, x| {
                    let y = t.softmax_rows(x)?;
                    let sel = t.constant(Tensor::vector(if probe == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }));
                    let d = t.rows_dot(y, sel)?;
                    Ok(t.sum(d))
                },
                &Tensor::new(vec![1, 2], vec![0.1, 0.2]).unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn sse_value_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let l = tape.sum_squared_error(a, b).unwrap();
        assert_eq!(tape.value(l).item(), 5.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 4.0]);

        let same = tape.sum_squared_error(a, a).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        let c = tape.constant(Tensor::vector(vec![0.0; 3]));
        assert!(tape.sum_squared_error(a, c).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![3.0, -1.0, 7.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_through_tanh_at_origin_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.tanh(x);
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let l = tape.sum_squared_error(y, z).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn fan_out_sums_path_gradients() {
        // loss = sum(tanh(x)) + sum(3 x): d/dx = (1 - tanh^2) + 3
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.5]));
        let a = tape.tanh(x);
        let b = tape.scale(x, 3.0);
        let c = tape.add(a, b).unwrap();
        let l = tape.sum(c);
        let g = tape.backward(l).unwrap();
        let expected = (1.0 - 0.5f64.tanh().powi(2)) + 3.0;
        assert_abs_diff_eq!(g.get(x).unwrap().item(), expected, epsilon = 1e-15);
    }

    #[test]
    fn finite_diff_check_of_sum_of_squares_and_constant() {
        let sq = finite_diff_check(
            |t, x| {
                let z = t.constant(Tensor::zeros(&[3]));
                t.sum_squared_error(x, z)
            },
            &Tensor::vector(vec![1.0, 2.0, 3.0]),
            1e-5,
        )
        .unwrap();
        assert!(sq < 1e-7, "{sq}");

        let constant = finite_diff_check(
            |t, x| {
                let z = t.scale(x, 0.0);
                Ok(t.sum(z))
            },
            &Tensor::vector(vec![1.0, 2.0]),
            1e-5,
        )
        .unwrap();
        assert_eq!(constant, 0.0);
    }

    #[test]
    fn tape_is_topological() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0]));
        let y = tape.tanh(x);
        let z = tape.scale(y, 2.0);
        for (i, node) in tape.nodes.iter().enumerate() {
            assert!(node.op.inputs().iter().all(|v| v.index() < i));
        }
        assert!(x.index() < y.index() && y.index() < z.index());
    }
}
