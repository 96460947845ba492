//! Tape-based reverse-mode autodiff.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards from
//! the root visits every node after all of its consumers, exactly once.

use std::collections::HashMap;
use std::sync::Arc;

use super::conv;
use super::params::{BnId, ParamId, ParamStore};
use super::tensor::{Shape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::guided::{box_plane, box_plane_adjoint};
use crate::image::{Interpolation, Resampler};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch norm normalizes with batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

enum Op<T> {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Sigmoid(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    DivGuarded(NodeId, NodeId, T),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Concat(Vec<NodeId>),
    RepeatChannels(NodeId),
    MulBroadcast(NodeId, NodeId),
    Resize(NodeId, Arc<Resampler>),
    BoxFilter(NodeId, usize),
    ChannelAvg(NodeId),
    ChannelMax(NodeId, Vec<u32>),
    Mean(NodeId),
    Sum(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation graph under construction; values are computed eagerly.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<(u64, usize), NodeId>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// The single value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is recorded.
    pub fn variable(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf holding a copy of a stored parameter. Repeated calls within one
    /// graph return the same node, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.param_node(store, id, true)
    }

    /// Parameter leaf that takes part in the forward pass but gets no gradient.
    pub fn param_frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.param_node(store, id, false)
    }

    fn param_node(&mut self, store: &ParamStore<T>, id: ParamId, trainable: bool) -> NodeId {
        let key = (store.uid(), id.index());
        if let Some(&n) = self.params.get(&key) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Leaf, trainable);
        self.params.insert(key, n);
        n
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let out = conv::forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let g = self.grad_any(&deps);
        Ok(self.push(out, Op::Conv { x, w, b, stride, pad }, g))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let v = self.value(x);
        let out = Tensor::from_vec(v.shape(), v.data().iter().map(|&a| f(a)).collect())
            .expect("same length");
        let g = self.grad_any(&[x]);
        self.push(out, op, g)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| a.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::lit(slope);
        self.unary(x, move |a| if a > T::zero() { a } else { a * s }, Op::LeakyRelu(x, s))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| T::one() / (T::one() + (-a).exp()), Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let s = T::lit(s);
        self.unary(x, move |a| a * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: NodeId, s: f64) -> NodeId {
        let s = T::lit(s);
        self.unary(x, move |a| a + s, Op::AddScalar(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| a.abs(), Op::Abs(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
        name: &str,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err(format!("{name}: {} vs {}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        let g = self.grad_any(&[a, b]);
        Ok(self.push(out, op, g))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// `a / (b + eps)`.
    pub fn div_guarded(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        let e = T::lit(eps);
        self.binary(a, b, move |x, y| x / (y + e), Op::DivGuarded(a, b, e), "div_guarded")
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(first);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (base.n, base.h, base.w) {
                return shape_err(format!("concat: {s} vs {base}"));
            }
            c += s.c;
        }
        let shape = base.with_c(c);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for &p in parts {
                let v = self.value(p);
                let ss = v.shape().sample();
                data.extend_from_slice(&v.data()[n * ss..(n + 1) * ss]);
            }
        }
        let out = Tensor::from_vec(shape, data)?;
        let g = self.grad_any(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), g))
    }

    /// Tiles a single-channel tensor to `c` channels.
    pub fn repeat_channels(&mut self, x: NodeId, c: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if s.c != 1 {
            return shape_err(format!("repeat_channels needs 1 channel, got {s}"));
        }
        let shape = s.with_c(c);
        let v = self.value(x);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..s.n {
            for _ in 0..c {
                data.extend_from_slice(v.plane(n, 0));
            }
        }
        let out = Tensor::from_vec(shape, data)?;
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::RepeatChannels(x), g))
    }

    /// `f * m` with the single-channel `m` broadcast over `f`'s channels.
    pub fn mul_broadcast(&mut self, f: NodeId, m: NodeId) -> Result<NodeId> {
        let (sf, sm) = (self.shape(f), self.shape(m));
        if sm != sf.with_c(1) {
            return shape_err(format!("mul_broadcast: map {sm} does not fit {sf}"));
        }
        let (vf, vm) = (self.value(f), self.value(m));
        let p = sf.plane();
        let mut data = Vec::with_capacity(sf.len());
        for n in 0..sf.n {
            let mp = vm.plane(n, 0);
            for c in 0..sf.c {
                data.extend(vf.plane(n, c).iter().zip(mp).map(|(&a, &b)| a * b));
            }
        }
        debug_assert_eq!(data.len(), sf.n * sf.c * p);
        let out = Tensor::from_vec(sf, data)?;
        let g = self.grad_any(&[f, m]);
        Ok(self.push(out, Op::MulBroadcast(f, m), g))
    }

    pub fn resize(&mut self, x: NodeId, method: Interpolation, h: usize, w: usize) -> Result<NodeId> {
        if h == 0 || w == 0 {
            return shape_err("resize to an empty plane");
        }
        let s = self.shape(x);
        let r = Arc::new(Resampler::new(method, (s.h, s.w), (h, w)));
        let shape = s.with_hw(h, w);
        let mut out = Tensor::zeros(shape);
        let p = shape.plane();
        {
            let v = self.value(x);
            let od = out.data_mut();
            for n in 0..s.n {
                for c in 0..s.c {
                    let k = n * s.c + c;
                    r.apply(v.plane(n, c), &mut od[k * p..(k + 1) * p]);
                }
            }
        }
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::Resize(x, r), g))
    }

    pub fn bilinear_up(&mut self, x: NodeId, s: usize) -> Result<NodeId> {
        let sh = self.shape(x);
        self.resize(x, Interpolation::Bilinear, sh.h * s, sh.w * s)
    }

    /// Clipped-window mean filter (see [`crate::guided::box_plane`]).
    pub fn box_filter(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = self.value(x);
        let s = v.shape();
        let mut out = Tensor::zeros(s);
        let p = s.plane();
        for k in 0..s.n * s.c {
            box_plane(
                &v.data()[k * p..(k + 1) * p],
                s.h,
                s.w,
                r,
                &mut out.data_mut()[k * p..(k + 1) * p],
            );
        }
        let g = self.grad_any(&[x]);
        self.push(out, Op::BoxFilter(x, r), g)
    }

    pub fn channel_avg(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.shape();
        let inv = T::lit(1.0 / s.c as f64);
        let mut out = Tensor::zeros(s.with_c(1));
        let p = s.plane();
        for n in 0..s.n {
            let o = &mut out.data_mut()[n * p..(n + 1) * p];
            for c in 0..s.c {
                for (a, &b) in o.iter_mut().zip(v.plane(n, c)) {
                    *a += b;
                }
            }
            for a in o.iter_mut() {
                *a *= inv;
            }
        }
        let g = self.grad_any(&[x]);
        self.push(out, Op::ChannelAvg(x), g)
    }

    /// Max over channels; ties resolve to the lowest channel index.
    pub fn channel_max(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.shape();
        let p = s.plane();
        let mut out = Tensor::zeros(s.with_c(1));
        let mut arg = vec![0u32; s.n * p];
        for n in 0..s.n {
            let o = &mut out.data_mut()[n * p..(n + 1) * p];
            o.copy_from_slice(v.plane(n, 0));
            for c in 1..s.c {
                for (i, &b) in v.plane(n, c).iter().enumerate() {
                    if b > o[i] {
                        o[i] = b;
                        arg[n * p + i] = c as u32;
                    }
                }
            }
        }
        let g = self.grad_any(&[x]);
        self.push(out, Op::ChannelMax(x, arg), g)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.data().iter().copied().sum::<T>() / T::lit(v.len() as f64);
        let g = self.grad_any(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), g)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>();
        let g = self.grad_any(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    /// Per-channel normalization over batch and spatial dims.
    ///
    /// In [`BnMode::Train`] the batch statistics normalize the input and are
    /// folded into `stats` with momentum; in [`BnMode::Eval`] the running
    /// statistics are used as constants.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        store: &mut ParamStore<T>,
        stats: BnId,
        mode: BnMode,
    ) -> Result<NodeId> {
        let s = self.shape(x);
        if self.value(gamma).len() != s.c || self.value(beta).len() != s.c {
            return shape_err(format!("batch_norm affine terms do not match {s}"));
        }
        let p = s.plane();
        let count = (s.n * p) as f64;
        let eps = T::lit(BN_EPS);
        let running = store.bn_mut(stats);
        let (mean, var) = match mode {
            BnMode::Train => {
                let v = self.nodes[x.0].value.data();
                let mut mean = vec![T::zero(); s.c];
                let mut var = vec![T::zero(); s.c];
                for c in 0..s.c {
                    let mut acc = 0.0f64;
                    for n in 0..s.n {
                        let o = (n * s.c + c) * p;
                        acc += v[o..o + p].iter().map(|a| a.to_f64().unwrap()).sum::<f64>();
                    }
                    let m = acc / count;
                    let mut sq = 0.0f64;
                    for n in 0..s.n {
                        let o = (n * s.c + c) * p;
                        sq += v[o..o + p]
                            .iter()
                            .map(|a| (a.to_f64().unwrap() - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[c] = T::lit(m);
                    var[c] = T::lit(sq / count);
                    let unbiased = if count > 1.0 { sq / (count - 1.0) } else { sq };
                    let mom = BN_MOMENTUM;
                    running.mean[c] = T::lit((1.0 - mom) * running.mean[c].to_f64().unwrap() + mom * m);
                    running.var[c] =
                        T::lit((1.0 - mom) * running.var[c].to_f64().unwrap() + mom * unbiased);
                }
                running.updates += 1;
                (mean, var)
            }
            BnMode::Eval => {
                if running.updates == 0 {
                    log::warn!(
                        "batch norm `{}` evaluated before any training step; using initial statistics",
                        running.name
                    );
                }
                (running.mean.clone(), running.var.clone())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let xv = self.value(x).data();
        let mut xhat = vec![T::zero(); s.len()];
        let mut out = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let o = (n * s.c + c) * p;
                for i in o..o + p {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out.data_mut()[i] = gv[c] * h + bv[c];
                }
            }
        }
        let g = self.grad_any(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == BnMode::Train,
            },
            g,
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, has shape {}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let params = self
            .params
            .iter()
            .map(|(&(uid, idx), &node)| (uid, idx, node))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, stride, pad } => {
                let (x, w, b) = (*x, *w, *b);
                let (mut gx, mut gw, mut gb) = (None, None, None);
                if self.wants(x) {
                    gx = grads[x.0].take().or_else(|| Some(vec![T::zero(); val(x).len()]));
                }
                if self.wants(w) {
                    gw = grads[w.0].take().or_else(|| Some(vec![T::zero(); val(w).len()]));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    gb = grads[b.0].take().or_else(|| Some(vec![T::zero(); val(b).len()]));
                }
                conv::backward(
                    self.value(x),
                    self.value(w),
                    g,
                    *stride,
                    *pad,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = gw {
                    grads[w.0] = Some(v);
                }
                if let (Some(v), Some(b)) = (gb, b) {
                    grads[b.0] = Some(v);
                }
            }
            Op::Relu(x) => self.acc(grads, *x, |d| {
                for ((d, &g), &a) in d.iter_mut().zip(g).zip(val(*x)) {
                    if a > T::zero() {
                        *d += g;
                    }
                }
            }),
            Op::LeakyRelu(x, s) => self.acc(grads, *x, |d| {
                for ((d, &g), &a) in d.iter_mut().zip(g).zip(val(*x)) {
                    *d += if a > T::zero() { g } else { g * *s };
                }
            }),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.acc(grads, *x, |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (T::one() - y);
                    }
                })
            }
            Op::Scale(x, s) => self.acc(grads, *x, |d| {
                for (d, &g) in d.iter_mut().zip(g) {
                    *d += g * *s;
                }
            }),
            Op::AddScalar(x) => self.acc(grads, *x, |d| add_into(d, g)),
            Op::Abs(x) => self.acc(grads, *x, |d| {
                for ((d, &g), &a) in d.iter_mut().zip(g).zip(val(*x)) {
                    if a > T::zero() {
                        *d += g;
                    } else if a < T::zero() {
                        *d -= g;
                    }
                }
            }),
            Op::Square(x) => self.acc(grads, *x, |d| {
                for ((d, &g), &a) in d.iter_mut().zip(g).zip(val(*x)) {
                    *d += g * (a + a);
                }
            }),
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| {
                    for (d, &g) in d.iter_mut().zip(g) {
                        *d -= g;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::DivGuarded(a, b, e) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g / (y + *e);
                    }
                });
                self.acc(grads, *b, |d| {
                    for (((d, &g), &x), &y) in d.iter_mut().zip(g).zip(va).zip(vb) {
                        let den = y + *e;
                        *d -= g * x / (den * den);
                    }
                });
            }
            Op::Concat(parts) => {
                let s = node.value.shape();
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let ss = ps.sample();
                    self.acc(grads, p, |d| {
                        for n in 0..s.n {
                            let src = &g[n * s.sample() + offset..n * s.sample() + offset + ss];
                            add_into(&mut d[n * ss..(n + 1) * ss], src);
                        }
                    });
                    offset += ss;
                }
            }
            Op::RepeatChannels(x) => {
                let s = node.value.shape();
                let p = s.plane();
                self.acc(grads, *x, |d| {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let o = (n * s.c + c) * p;
                            add_into(&mut d[n * p..(n + 1) * p], &g[o..o + p]);
                        }
                    }
                });
            }
            Op::MulBroadcast(f, m) => {
                let s = node.value.shape();
                let p = s.plane();
                let (vf, vm) = (val(*f), val(*m));
                self.acc(grads, *f, |d| {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let o = (n * s.c + c) * p;
                            for i in 0..p {
                                d[o + i] += g[o + i] * vm[n * p + i];
                            }
                        }
                    }
                });
                self.acc(grads, *m, |d| {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let o = (n * s.c + c) * p;
                            for i in 0..p {
                                d[n * p + i] += g[o + i] * vf[o + i];
                            }
                        }
                    }
                });
            }
            Op::Resize(x, r) => {
                let s = node.value.shape();
                let ps = self.shape(*x);
                let (pi, po) = (ps.plane(), s.plane());
                self.acc(grads, *x, |d| {
                    for k in 0..s.n * s.c {
                        r.apply_adjoint(&g[k * po..(k + 1) * po], &mut d[k * pi..(k + 1) * pi]);
                    }
                });
            }
            Op::BoxFilter(x, r) => {
                let s = node.value.shape();
                let p = s.plane();
                self.acc(grads, *x, |d| {
                    for k in 0..s.n * s.c {
                        box_plane_adjoint(&g[k * p..(k + 1) * p], s.h, s.w, *r, &mut d[k * p..(k + 1) * p]);
                    }
                });
            }
            Op::ChannelAvg(x) => {
                let s = self.shape(*x);
                let p = s.plane();
                let inv = T::lit(1.0 / s.c as f64);
                self.acc(grads, *x, |d| {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let o = (n * s.c + c) * p;
                            for i in 0..p {
                                d[o + i] += g[n * p + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::ChannelMax(x, arg) => {
                let s = self.shape(*x);
                let p = s.plane();
                self.acc(grads, *x, |d| {
                    for n in 0..s.n {
                        for i in 0..p {
                            let c = arg[n * p + i] as usize;
                            d[(n * s.c + c) * p + i] += g[n * p + i];
                        }
                    }
                });
            }
            Op::Mean(x) => {
                let inv = g[0] / T::lit(self.value(*x).len() as f64);
                self.acc(grads, *x, |d| {
                    for d in d.iter_mut() {
                        *d += inv;
                    }
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |d| {
                for d in d.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = node.value.shape();
                let p = s.plane();
                let m = T::lit((s.n * p) as f64);
                let gv = val(*gamma);
                let mut sum_g = vec![T::zero(); s.c];
                let mut sum_gx = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let o = (n * s.c + c) * p;
                        for i in o..o + p {
                            sum_g[c] += g[i];
                            sum_gx[c] += g[i] * xhat[i];
                        }
                    }
                }
                self.acc(grads, *gamma, |d| add_into(d, &sum_gx));
                self.acc(grads, *beta, |d| add_into(d, &sum_g));
                self.acc(grads, *x, |d| {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let o = (n * s.c + c) * p;
                            let k = gv[c] * inv_std[c];
                            if *batch_stats {
                                let (mg, mgx) = (sum_g[c] / m, sum_gx[c] / m);
                                for i in o..o + p {
                                    d[i] += k * (g[i] - mg - xhat[i] * mgx);
                                }
                            } else {
                                for i in o..o + p {
                                    d[i] += k * g[i];
                                }
                            }
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.wants(id) {
            return;
        }
        let len = self.nodes[id.0].value.len();
        let slot = grads[id.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

/// Gradients of a scalar root with respect to every leaf that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(u64, usize, NodeId)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients for `store`, indexed like the store.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Option<&[T]>> {
        let mut out = vec![None; store.len()];
        for &(uid, idx, node) in &self.params {
            if uid == store.uid() {
                out[idx] = self.wrt(node);
            }
        }
        out
    }
}
