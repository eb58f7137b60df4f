//! Reverse-mode tape.
//!
//! Every op appends a node holding its forward value and the ids of its
//! inputs. Nodes are created in evaluation order, so walking the tape
//! backwards from the loss visits each node after all of its consumers.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{Gradients, ParamId, ParamStore, Real, Tensor, TensorError};

/// Per-sample input and weight gradients of a convolution.
type Partials<T> = (Option<Vec<T>>, Option<Vec<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Stride-1 "same" padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, pad: kernel / 2 }
    }

    pub fn strided(stride: usize, kernel: usize) -> Self {
        Self { stride, pad: kernel / 2 }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Upsample2(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    GlobalAvgPool(Var),
    MeanRows(Var),
    TemporalShift { x: Var, fold: usize },
    BceWithLogits { z: Var, target: Vec<T>, weight: Option<Vec<T>> },
    SoftmaxCe { z: Var, labels: Vec<usize> },
    Mse { pred: Var, target: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
}

fn shape_err<T>(msg: String) -> Result<T, TensorError> {
    Err(TensorError::Shape(msg))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bound: HashMap::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Binds a trainable parameter. Repeated calls for the same id return the
    /// same node, so every use within one pass shares one set of weights.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Leaf, requires_grad: true, param: Some(id) });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var, TensorError> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c {
            return shape_err(format!("conv2d: input has {c} channels, kernel expects {wc}"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return shape_err(format!("conv2d: bias shape {:?}, expected [{o}]", self.value(b).shape()));
            }
        }
        if geom.stride == 0 || h + 2 * geom.pad < kh || wd + 2 * geom.pad < kw {
            return shape_err(format!("conv2d: kernel {kh}x{kw} does not fit {h}x{wd} with pad {}", geom.pad));
        }
        let ho = (h + 2 * geom.pad - kh) / geom.stride + 1;
        let wo = (wd + 2 * geom.pad - kw) / geom.stride + 1;
        let ckk = c * kh * kw;
        let plane = ho * wo;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * o * plane];
        out.par_chunks_mut(o * plane).enumerate().for_each(|(i, dst)| {
            let mut cols = vec![T::zero(); ckk * plane];
            im2col(&xs[i * c * h * wd..(i + 1) * c * h * wd], (c, h, wd), (kh, kw), geom, (ho, wo), &mut cols);
            T::gemm(false, false, o, plane, ckk, T::one(), ws, &cols, T::zero(), dst);
            if let Some(bias) = bias {
                for (oc, row) in dst.chunks_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v = *v + bias[oc]);
                }
            }
        });
        let value = Tensor::from_vec(&[n, o, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// `y = x W^T + b` for `x: [n, in]`, `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, win) = self.value(w).dims2()?;
        if win != fin {
            return shape_err(format!("linear: input width {fin}, weight expects {win}"));
        }
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != fout {
                return shape_err(format!("linear: bias length {}, expected {fout}", bias.len()));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bias);
            }
        }
        T::gemm(false, true, n, fout, fin, T::one(), self.value(x).data(), self.value(w).data(), T::one(), &mut out);
        let value = Tensor::from_vec(&[n, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let src = self.value(x);
        Tensor::from_vec(src.shape(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.map(x, |v| v * factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("{name}: shapes {:?} and {:?} differ", ta.shape(), tb.shape()));
        }
        Tensor::from_vec(ta.shape(), ta.data().iter().zip(tb.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Nearest-neighbour 2x upsampling of `[n, c, h, w]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (p, dst) in out.chunks_mut(h2 * w2).enumerate() {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = s[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h2, w2], out)?;
        Ok(self.push(value, Op::Upsample2(x), &[x]))
    }

    /// Spatial mean: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = (h * w) as f64;
        let out = self.value(x).data().chunks(h * w).map(|p| T::from_f64(p.iter().map(|v| v.as_f64()).sum::<f64>() / hw)).collect();
        let value = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// Mean over the leading axis: `[n, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c) = self.value(x).dims2()?;
        if n == 0 {
            return shape_err("mean_rows: no rows".into());
        }
        let src = self.value(x).data();
        let out = (0..c).map(|j| T::from_f64((0..n).map(|i| src[i * c + j].as_f64()).sum::<f64>() / n as f64)).collect();
        let value = Tensor::from_vec(&[1, c], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// Temporal channel shift on `[t, c, h, w]` frames.
    ///
    /// The first `floor(c * fraction)` channels take their value from the
    /// previous frame, the next group from the following frame; missing
    /// frames read as zero. Remaining channels pass through.
    pub fn temporal_shift(&mut self, x: Var, fraction: f64) -> Result<Var, TensorError> {
        let (t, c, h, w) = self.value(x).dims4()?;
        let fold = (c as f64 * fraction).floor() as usize;
        if fold == 0 || 2 * fold > c {
            return shape_err(format!("temporal_shift: {c} channels too few for fraction {fraction}"));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for ti in 0..t {
            for ci in 0..c {
                let from = if ci < fold {
                    ti.checked_sub(1)
                } else if ci < 2 * fold {
                    (ti + 1 < t).then_some(ti + 1)
                } else {
                    Some(ti)
                };
                if let Some(tf) = from {
                    let dst = (ti * c + ci) * hw;
                    let s = (tf * c + ci) * hw;
                    out[dst..dst + hw].copy_from_slice(&src[s..s + hw]);
                }
            }
        }
        let value = Tensor::from_vec(&[t, c, h, w], out)?;
        Ok(self.push(value, Op::TemporalShift { x, fold }, &[x]))
    }

    /// Mean of `w * [softplus(z) - y z]` over all elements, which equals the
    /// weighted binary cross-entropy of `sigmoid(z)` against `y`.
    pub fn bce_with_logits(&mut self, z: Var, target: &[T], weight: Option<&[T]>) -> Result<Var, TensorError> {
        let zs = self.value(z).data();
        if target.len() != zs.len() || weight.is_some_and(|w| w.len() != zs.len()) {
            return shape_err(format!("bce_with_logits: {} logits, {} targets", zs.len(), target.len()));
        }
        let mut total = 0.0f64;
        for (i, (&zi, &yi)) in zs.iter().zip(target).enumerate() {
            let wi = weight.map_or(1.0, |w| w[i].as_f64());
            let (zf, yf) = (zi.as_f64(), yi.as_f64());
            total += wi * (softplus(zf) - yf * zf);
        }
        let value = Tensor::scalar(T::from_f64(total / zs.len() as f64));
        let op = Op::BceWithLogits { z, target: target.to_vec(), weight: weight.map(<[T]>::to_vec) };
        Ok(self.push(value, op, &[z]))
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against class indices.
    pub fn softmax_ce(&mut self, z: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let (n, k) = self.value(z).dims2()?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return shape_err(format!("softmax_ce: {n}x{k} logits vs labels {labels:?}"));
        }
        let zs = self.value(z).data();
        let mut total = 0.0;
        for (row, &label) in zs.chunks(k).zip(labels) {
            total += log_sum_exp(row) - row[label].as_f64();
        }
        let value = Tensor::scalar(T::from_f64(total / n as f64));
        Ok(self.push(value, Op::SoftmaxCe { z, labels: labels.to_vec() }, &[z]))
    }

    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var, TensorError> {
        let ps = self.value(pred).data();
        if ps.len() != target.len() {
            return shape_err(format!("mse: {} predictions, {} targets", ps.len(), target.len()));
        }
        let total: f64 = ps.iter().zip(target).map(|(&p, &t)| (p.as_f64() - t.as_f64()).powi(2)).sum();
        let value = Tensor::scalar(T::from_f64(total / ps.len() as f64));
        Ok(self.push(value, Op::Mse { pred, target: target.to_vec() }, &[pred]))
    }

    /// Back-propagates from a scalar `loss` and returns gradients for every
    /// bound parameter of `store`.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return shape_err(format!("backward: loss must be scalar, got {:?}", lv.shape()));
        }
        if !lv.item().is_finite() {
            return Err(TensorError::NonFinite(format!("loss = {:?}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients { grads: (0..store.len()).map(|_| None).collect() };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(pid) = node.param {
                out.grads[pid.0] = Some(Tensor::from_vec(node.value.shape(), g)?);
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), TensorError> {
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let d = self.value(*x).data().iter().zip(g).map(|(&v, &gi)| if v > T::zero() { gi } else { T::zero() }).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = node.value.data().iter().zip(g).map(|(&y, &gi)| gi * y * (T::one() - y)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, g.iter().map(|&gi| gi * *f).collect());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let w2 = 2 * w;
                let mut d = vec![T::zero(); n * c * h * w];
                for (p, dst) in d.chunks_mut(h * w).enumerate() {
                    let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            let top = 2 * y * w2 + 2 * xx;
                            dst[y * w + xx] = src[top] + src[top + 1] + src[top + w2] + src[top + w2 + 1];
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let scale = T::from_f64(1.0 / (h * w) as f64);
                let d = g.iter().flat_map(|&gi| std::iter::repeat_n(gi * scale, h * w)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::MeanRows(x) => {
                let (n, _) = self.value(*x).dims2()?;
                let scale = T::from_f64(1.0 / n as f64);
                let row: Vec<T> = g.iter().map(|&gi| gi * scale).collect();
                self.accumulate(grads, *x, row.repeat(n));
            }
            Op::TemporalShift { x, fold } => {
                let (t, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let mut d = vec![T::zero(); g.len()];
                for ti in 0..t {
                    for ci in 0..c {
                        let from = if ci < *fold {
                            ti.checked_sub(1)
                        } else if ci < 2 * fold {
                            (ti + 1 < t).then_some(ti + 1)
                        } else {
                            Some(ti)
                        };
                        if let Some(tf) = from {
                            let src = (ti * c + ci) * hw;
                            let dst = (tf * c + ci) * hw;
                            for k in 0..hw {
                                d[dst + k] = d[dst + k] + g[src + k];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::BceWithLogits { z, target, weight } => {
                let scale = g[0].as_f64() / target.len() as f64;
                let d = self
                    .value(*z)
                    .data()
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(i, (&zi, &yi))| {
                        let wi = weight.as_ref().map_or(1.0, |w| w[i].as_f64());
                        T::from_f64(scale * wi * (sigmoid_f64(zi.as_f64()) - yi.as_f64()))
                    })
                    .collect();
                self.accumulate(grads, *z, d);
            }
            Op::SoftmaxCe { z, labels } => {
                let (n, k) = self.value(*z).dims2()?;
                let scale = g[0].as_f64() / n as f64;
                let mut d = Vec::with_capacity(n * k);
                for (row, &label) in self.value(*z).data().chunks(k).zip(labels) {
                    let lse = log_sum_exp(row);
                    for (j, &v) in row.iter().enumerate() {
                        let p = (v.as_f64() - lse).exp();
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        d.push(T::from_f64(scale * (p - onehot)));
                    }
                }
                self.accumulate(grads, *z, d);
            }
            Op::Mse { pred, target } => {
                let scale = 2.0 * g[0].as_f64() / target.len() as f64;
                let d = self.value(*pred).data().iter().zip(target).map(|(&p, &t)| T::from_f64(scale * (p.as_f64() - t.as_f64()))).collect();
                self.accumulate(grads, *pred, d);
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = self.value(*x).dims2()?;
                let (fout, _) = self.value(*w).dims2()?;
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(true, false, fout, fin, n, T::one(), g, self.value(*x).data(), T::zero(), &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(a, &r)| *a = *a + r);
                    }
                    self.accumulate(grads, *b, db);
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(false, false, n, fin, fout, T::one(), g, self.value(*w).data(), T::zero(), &mut dx);
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Conv2d { x, w, b, geom } => self.conv2d_backward(*x, *w, *b, *geom, node, g, grads)?,
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) -> Result<(), TensorError> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, _, kh, kw) = self.value(w).dims4()?;
        let (_, _, ho, wo) = node.value.dims4()?;
        let (ckk, plane, in_len) = (c * kh * kw, ho * wo, c * h * wd);
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let want_w = self.wants(w);
        let want_x = self.wants(x);

        // per-sample partials, reduced in sample order for determinism
        let partials: Vec<Partials<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let gi = &g[i * o * plane..(i + 1) * o * plane];
                let dw = want_w.then(|| {
                    let mut cols = vec![T::zero(); ckk * plane];
                    im2col(&xs[i * in_len..(i + 1) * in_len], (c, h, wd), (kh, kw), geom, (ho, wo), &mut cols);
                    let mut dw = vec![T::zero(); o * ckk];
                    T::gemm(false, true, o, ckk, plane, T::one(), gi, &cols, T::zero(), &mut dw);
                    dw
                });
                let dx = want_x.then(|| {
                    let mut dcols = vec![T::zero(); ckk * plane];
                    T::gemm(true, false, ckk, plane, o, T::one(), ws, gi, T::zero(), &mut dcols);
                    let mut dx = vec![T::zero(); in_len];
                    col2im(&dcols, (c, h, wd), (kh, kw), geom, (ho, wo), &mut dx);
                    dx
                });
                (dw, dx)
            })
            .collect();

        if want_w {
            let mut dw = vec![T::zero(); o * ckk];
            for (p, _) in &partials {
                dw.iter_mut().zip(p.as_ref().unwrap()).for_each(|(a, &v)| *a = *a + v);
            }
            self.accumulate(grads, w, dw);
        }
        if let Some(b) = b {
            let mut db = vec![T::zero(); o];
            for sample in g.chunks(o * plane) {
                for (oc, row) in sample.chunks(plane).enumerate() {
                    db[oc] = db[oc] + row.iter().copied().sum::<T>();
                }
            }
            self.accumulate(grads, b, db);
        }
        if want_x {
            let dx: Vec<T> = partials.into_iter().flat_map(|(_, d)| d.unwrap()).collect();
            self.accumulate(grads, x, dx);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    T::from_f64(sigmoid_f64(v.as_f64()))
}

#[inline]
pub(crate) fn sigmoid_f64(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp<T: Real>(row: &[T]) -> f64 {
    let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln()
}

fn im2col<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    geom: ConvGeom,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        *slot = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    geom: ConvGeom,
    (ho, wo): (usize, usize),
    dx: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            let slot = &mut dx[base + ix as usize];
                            *slot = *slot + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
