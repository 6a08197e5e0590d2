//! Reverse-mode differentiation over a recorded operation graph.
//!
//! A [`Graph`] lives for one forward/backward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for the adjoint pass.

use std::collections::HashMap;

use super::ops::{self, Broadcast};
use super::param::{ParamId, ParamStore};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Node handle inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Softmax(Var, usize),
    Normalize { x: Var, rstd: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    Conv2d(Var, Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Gather { x: Var, index: Vec<usize> },
    AvgPool2(Var),
    Upsample2(Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter record. Repeated binds of one id return the same node,
    /// so both streams of a shared block differentiate into one accumulator.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = ops::transpose(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(y, Op::Transpose(a), rg))
    }

    fn binary(&mut self, a: Var, b: Var, mk: fn(Var, Var, Broadcast) -> Op, f: fn(T, T) -> T) -> Result<Var> {
        let bc = Broadcast::resolve(self.shape(a), self.shape(b))?;
        let y = ops::zip_broadcast(self.value(a), self.value(b), bc, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, mk(a, b, bc), rg))
    }

    /// `a + b`, with `b` broadcast per [`Broadcast`].
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cc = T::from_f64(c);
        let y = self.value(a).map(|v| v * cc);
        let rg = self.rg(a);
        self.push(y, Op::Scale(a, c), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let y = ops::softmax(self.value(a), axis)?;
        let rg = self.rg(a);
        Ok(self.push(y, Op::Softmax(a, axis), rg))
    }

    /// Zero-mean, unit-variance over the last axis, no affine.
    pub fn normalize(&mut self, a: Var, eps: f64) -> Var {
        let (y, _, rstd) = ops::normalize_rows(self.value(a), eps);
        let rg = self.rg(a);
        self.push(y, Op::Normalize { x: a, rstd }, rg)
    }

    /// Layer normalisation over the last axis followed by `gain`/`bias` per column.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = *self.shape(a).last().unwrap_or(&1);
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "affine {:?}/{:?} vs normalized extent {cols}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let n = self.normalize(a, eps);
        let s = self.mul(n, gain)?;
        self.add(s, bias)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let y = ops::gelu(self.value(a));
        let rg = self.rg(a);
        self.push(y, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = ops::relu(self.value(a));
        let rg = self.rg(a);
        self.push(y, Op::Relu(a), rg)
    }

    pub fn conv2d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(kernels))?;
        let rg = self.rg(x) || self.rg(kernels);
        Ok(self.push(y, Op::Conv2d(x, kernels), rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat(&vals, axis)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(y, Op::Concat(xs.to_vec(), axis), rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice(self.value(x), axis, start, len)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// `y.flat[i] = x.flat[index[i]]`, reshaped to `shape`. Covers any fixed
    /// permutation or selection of elements.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(
                "gather",
                format!("{} indices for output {shape:?}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.numel()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of bounds for {:?}", src.shape()),
            ));
        }
        let data = index.iter().map(|&i| src.data()[i]).collect();
        let y = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Gather { x, index }, rg))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let y = ops::avg_pool2(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::AvgPool2(x), rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let y = ops::upsample2(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Upsample2(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = T::from_f64(v.sum_f64() / v.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// `x·W` over the last axis for any leading shape (rank-2 fast path).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul(x, w)
    }

    /// Reverse sweep from a scalar node. Gradients of constant nodes are not computed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_with(loss, T::one())
    }

    /// Reverse sweep seeding `∂loss = seed`.
    pub fn backward_with(&self, loss: Var, seed: T) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), seed));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(idx, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }

        let mut params = Vec::new();
        for (&id, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                params.push((id, g));
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { by_node: grads, params })
    }

    fn propagate(&self, idx: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let send = |grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign_scaled(&g, T::one()),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2()?;
                let (_, n) = bv.dims2()?;
                if self.rg(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, gy.data(), false, bv.data(), true, &mut ga, false);
                    send(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, av.data(), true, gy.data(), false, &mut gb, false);
                    send(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Transpose(a) => send(grads, *a, ops::transpose(gy)?),
            Op::Add(a, b, bc) => {
                if self.rg(*a) {
                    send(grads, *a, gy.clone());
                }
                if self.rg(*b) {
                    send(grads, *b, ops::reduce_broadcast(gy, self.shape(*b), *bc));
                }
            }
            Op::Sub(a, b, bc) => {
                if self.rg(*a) {
                    send(grads, *a, gy.clone());
                }
                if self.rg(*b) {
                    let g = ops::reduce_broadcast(gy, self.shape(*b), *bc);
                    send(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b, bc) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.rg(*a) {
                    send(grads, *a, ops::zip_broadcast(gy, bv, *bc, |g, y| g * y));
                }
                if self.rg(*b) {
                    let full = ops::zip_broadcast(gy, av, Broadcast::Same, |g, x| g * x);
                    send(grads, *b, ops::reduce_broadcast(&full, self.shape(*b), *bc));
                }
            }
            Op::Scale(a, c) => {
                let cc = T::from_f64(*c);
                send(grads, *a, gy.map(|v| v * cc));
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let (outer, len, inner) = super::tensor::axis_split(y.shape(), *axis);
                let yd = y.data();
                let gd = gy.data();
                let mut gx = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0f64;
                        for j in 0..len {
                            let p = base + j * inner;
                            dot += gd[p].to_f64() * yd[p].to_f64();
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            gx[p] = T::from_f64(yd[p].to_f64() * (gd[p].to_f64() - dot));
                        }
                    }
                }
                send(grads, *a, Tensor::new(y.shape().to_vec(), gx)?);
            }
            Op::Normalize { x, rstd } => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap_or(&1);
                let gd = gy.data();
                let mut gx = vec![T::zero(); y.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let g = &gd[span.clone()];
                    let yr = &y[span.clone()];
                    let mg = g.iter().map(|v| v.to_f64()).sum::<f64>() / cols as f64;
                    let mgy = g.iter().zip(yr).map(|(a, b)| a.to_f64() * b.to_f64()).sum::<f64>() / cols as f64;
                    for ((o, gv), yv) in gx[span].iter_mut().zip(g).zip(yr) {
                        *o = T::from_f64(rs * (gv.to_f64() - mg - yv.to_f64() * mgy));
                    }
                }
                send(grads, *x, Tensor::new(node.value.shape().to_vec(), gx)?);
            }
            Op::Gelu(a) => {
                let xv = self.value(*a);
                let g = ops::zip_broadcast(gy, xv, Broadcast::Same, |g, x| {
                    g * T::from_f64(ops::gelu_grad_scalar(x.to_f64()))
                });
                send(grads, *a, g);
            }
            Op::Relu(a) => {
                let xv = self.value(*a);
                let g = ops::zip_broadcast(
                    gy,
                    xv,
                    Broadcast::Same,
                    |g, x| {
                        if x > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    },
                );
                send(grads, *a, g);
            }
            Op::Conv2d(x, k) => {
                let (gx, gk) = ops::conv2d_backward(self.value(*x), self.value(*k), gy, self.rg(*x), self.rg(*k));
                if let Some(gx) = gx {
                    send(grads, *x, gx);
                }
                if let Some(gk) = gk {
                    send(grads, *k, gk);
                }
            }
            Op::Concat(xs, axis) => {
                let mut start = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.rg(v) {
                        send(grads, v, ops::slice(gy, *axis, start, len)?);
                    }
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, ext, inner) = super::tensor::axis_split(xs, *axis);
                let len = gy.shape()[*axis];
                let mut g = Tensor::zeros(xs);
                let gd = g.data_mut();
                for o in 0..outer {
                    let dst = o * ext * inner + start * inner;
                    let src = o * len * inner;
                    gd[dst..dst + len * inner].copy_from_slice(&gy.data()[src..src + len * inner]);
                }
                send(grads, *x, g);
            }
            Op::Reshape(x) => send(grads, *x, gy.clone().reshape(self.shape(*x))?),
            Op::Gather { x, index } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let d = gx.data_mut();
                for (&i, &g) in index.iter().zip(gy.data()) {
                    d[i] += g;
                }
                send(grads, *x, gx);
            }
            Op::AvgPool2(x) => {
                let quarter = T::from_f64(0.25);
                let up = ops::upsample2(gy)?;
                send(grads, *x, up.map(|v| v * quarter));
            }
            Op::Upsample2(x) => {
                let pooled = ops::avg_pool2(gy)?;
                send(grads, *x, pooled.map(|v| v * T::from_f64(4.0)));
            }
            Op::Sum(x) => {
                let g = gy.data()[0];
                send(grads, *x, Tensor::full(self.shape(*x), g));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                let g = T::from_f64(gy.data()[0].to_f64() / n);
                send(grads, *x, Tensor::full(self.shape(*x), g));
            }
        }
        Ok(())
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to a [`Graph::variable`] node (zeros if unreached).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Adds `scale·∂` into the store's accumulators for every trainable record reached.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) -> Result<()> {
        for (id, g) in &self.params {
            store.accumulate(*id, g, scale)?;
        }
        Ok(())
    }
}
