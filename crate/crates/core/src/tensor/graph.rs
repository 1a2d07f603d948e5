//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! topological order for the backward sweep. Each operator caches whatever
//! its backward rule needs at forward time.

use rayon::prelude::*;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode batch norm, used to update
/// running estimates. `var` is the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Debug)]
enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    GlobalAvgPool(Var),
    ConcatCols(Vec<Var>),
    Mean(Var),
    LogMeanExp(Var),
    BceWithLogits {
        logits: Var,
        labels: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Samples per partial weight-gradient buffer in conv backward. Fixed so the
/// reduction order does not depend on the thread count.
const CONV_GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

fn dim_err(msg: String) -> Error {
    Error::Dimension(msg)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad());
        value.set_requires_grad(rg);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.set_requires_grad(false);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is recorded (used for input-gradient checks).
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.set_requires_grad(true);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let src = store.get(id);
        let mut value = Tensor::new(src.shape(), src.data().to_vec()).expect("stored shape");
        value.set_requires_grad(store.is_trainable(id));
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// 1-D convolution. `x`: `B x Cin x L`, `w`: `Cout x Cin x K`, `b`: `Cout`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return Err(dim_err(format!("conv1d: input {xs:?} vs weight {ws:?} (stride {stride})")));
        }
        let (bsz, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, kw) = (ws[0], ws[2]);
        if len + 2 * pad < kw {
            return Err(dim_err(format!("conv1d: length {len} with padding {pad} shorter than kernel {kw}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(dim_err(format!("conv1d: bias {:?} for {cout} channels", self.shape(b))));
            }
        }
        let lout = (len + 2 * pad - kw) / stride + 1;
        let geo = ConvGeom { cin, len, cout, kw, lout, stride, pad };
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = b.map(|b| self.data(b));
        let mut out = vec![T::zero(); bsz * cout * lout];
        out.par_chunks_mut(cout * lout)
            .zip(xd.par_chunks(cin * len))
            .for_each_init(
                || vec![T::zero(); cin * kw * lout],
                |cols, (ob, xb)| {
                    geo.im2col(xb, cols);
                    T::gemm(
                        cout, cin * kw, lout, T::one(),
                        wd, (cin * kw) as isize, 1,
                        cols, lout as isize, 1,
                        T::zero(), ob, lout as isize, 1,
                    );
                    if let Some(bd) = bd {
                        for (row, &bv) in ob.chunks_mut(lout).zip(bd) {
                            row.iter_mut().for_each(|v| *v += bv);
                        }
                    }
                },
            );
        let value = Tensor::new(&[bsz, cout, lout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv1d { x, w, b, stride, pad }, &inputs))
    }

    /// Affine map `x W^T + b`. `x`: `N x in`, `w`: `out x in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(dim_err(format!("linear: input {xs:?} vs weight {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(dim_err(format!("linear: bias {:?} for {dout} outputs", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * dout];
        T::gemm(
            n, din, dout, T::one(),
            self.data(x), din as isize, 1,
            self.data(w), 1, din as isize,
            T::zero(), &mut out, dout as isize, 1,
        );
        if let Some(b) = b {
            let bd = self.data(b);
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bd).for_each(|(v, &bv)| *v += bv);
            }
        }
        let value = Tensor::new(&[n, dout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    /// `a b` or `a b^T`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 {
            return Err(dim_err(format!("matmul: {as_:?} x {bs:?}")));
        }
        let (m, k) = (as_[0], as_[1]);
        let (kb, n, rsb, csb) = if trans_b {
            (bs[1], bs[0], 1, bs[1] as isize)
        } else {
            (bs[0], bs[1], bs[1] as isize, 1)
        };
        if k != kb {
            return Err(dim_err(format!("matmul: {as_:?} x {bs:?} (trans_b = {trans_b})")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m, k, n, T::one(),
            self.data(a), k as isize, 1,
            self.data(b), rsb, csb,
            T::zero(), &mut out, n as isize, 1,
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(dim_err(format!("softmax_rows expects 2-D input, got {s:?}")));
        }
        let d = s[1];
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Batch norm over every axis except 1 using batch statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (b, c, l) = self.bn_dims(x, gamma, beta)?;
        let n = b * l;
        if n < 2 {
            return Err(dim_err("batch norm in training mode needs more than one value per channel".into()));
        }
        let xd = self.data(x);
        let nf = T::from_f64(n as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let row = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                mean[ci] += row.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        for bi in 0..b {
            for ci in 0..c {
                let row = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                var[ci] += row.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
            }
        }
        let biased: Vec<T> = var.iter().map(|&v| v / nf).collect();
        let unbiased: Vec<T> = var.iter().map(|&v| v / T::from_f64((n - 1) as f64)).collect();
        let inv_std: Vec<T> = biased.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let v = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (_, c, _) = self.bn_dims(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(dim_err(format!("batch norm statistics for {} channels, input has {c}", mean.len())));
        }
        let inv_std = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        let (b, c, l) = match s.len() {
            2 => (s[0], s[1], 1),
            3 => (s[0], s[1], s[2]),
            _ => return Err(dim_err(format!("batch norm expects 2-D or 3-D input, got {s:?}"))),
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err(format!("batch norm affine parameters do not match {c} channels")));
        }
        Ok((b, c, l))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: Vec<T>, train: bool) -> Result<Var> {
        let (b, c, l) = self.bn_dims(x, gamma, beta)?;
        let xd = self.data(x);
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                for i in off..off + l {
                    let h = (xd[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = h;
                    out[i] = g[ci] * h + bt[ci];
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(
            value,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train },
            &[x, gamma, beta],
        ))
    }

    /// Layer normalization over the last axis, without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(dim_err(format!("layer_norm expects 2-D input, got {s:?}")));
        }
        let d = s[1];
        let df = T::from_f64(d as f64);
        let xd = self.data(x);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = Vec::with_capacity(s[0]);
        for (row, out) in xd.chunks(d).zip(xhat.chunks_mut(d)) {
            let mean = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = (v - mean) * is);
        }
        let value = Tensor::new(&s, xhat.clone())?;
        Ok(self.push(value, Op::LayerNorm { x, xhat, inv_std }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.data(x).to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(format!("elementwise op on {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * s).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Scale(x, s), &[x])
    }

    /// Mean over the last axis: `B x C x L -> B x C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[2] == 0 {
            return Err(dim_err(format!("global_avg_pool expects B x C x L, got {s:?}")));
        }
        let l = T::from_f64(s[2] as f64);
        let data = self.data(x).chunks(s[2]).map(|r| r.iter().copied().sum::<T>() / l).collect();
        let value = Tensor::new(&[s[0], s[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// Concatenates 2-D tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err("concat of nothing".into()))?;
        let rows = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(dim_err(format!("concat_cols: part {s:?} with {rows} rows expected")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(&[rows, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().copied().sum::<T>() / T::from_f64(d.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// `ln(mean(exp(x)))` over all entries, computed stably.
    pub fn log_mean_exp(&mut self, x: Var) -> Var {
        let v = log_mean_exp(self.data(x));
        self.push(Tensor::scalar(v), Op::LogMeanExp(x), &[x])
    }

    /// Mean binary cross-entropy over every logit, evaluated from logits as
    /// `max(z, 0) - z y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let z = self.data(logits);
        if z.len() != labels.len() {
            return Err(dim_err(format!("bce: {} logits for {} labels", z.len(), labels.len())));
        }
        let loss = bce_with_logits(z, labels);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits { logits, labels: labels.to_vec() },
            &[logits],
        ))
    }

    /// Mean softmax cross-entropy for `N x C` logits and class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(dim_err(format!("cross-entropy: logits {s:?} for {} targets", targets.len())));
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(s[1]).zip(targets) {
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            softmax_in_place(row);
        }
        loss /= T::from_f64(s[0] as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs },
            &[logits],
        ))
    }

    /// Runs the backward sweep from `root` (seeded with ones). Node gradients
    /// from any previous sweep are discarded first.
    pub fn backward(&mut self, root: Var) {
        for n in &mut self.nodes {
            n.value.take_grad();
        }
        let seed = vec![T::one(); self.nodes[root.0].value.numel()];
        if !self.nodes[root.0].value.requires_grad() {
            return;
        }
        self.nodes[root.0].value.accumulate_grad(&seed);
        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.nodes[i].value.accumulate_grad(&g);
            for (v, delta) in contributions {
                self.nodes[v.0].value.accumulate_grad(&delta);
            }
        }
    }

    /// Adds the gradients of parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for n in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&n.op, n.value.grad()) {
                if store.is_trainable(*id) {
                    store.get_mut(*id).accumulate_grad(g);
                }
            }
        }
    }

    /// `backward` followed by `accumulate_param_grads`.
    pub fn backward_into(&mut self, root: Var, store: &mut ParamStore<T>) {
        self.backward(root);
        self.accumulate_param_grads(store);
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv1d { x, w, b, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let geo = ConvGeom {
                    cin: xs[1],
                    len: xs[2],
                    cout: ws[0],
                    kw: ws[2],
                    lout: node.value.shape()[2],
                    stride: *stride,
                    pad: *pad,
                };
                let bsz = xs[0];
                if self.needs(*w) {
                    out.push((*w, geo.weight_grad(self.data(*x), g, bsz)));
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![T::zero(); geo.cout];
                    for gb in g.chunks(geo.cout * geo.lout) {
                        for (d, row) in db.iter_mut().zip(gb.chunks(geo.lout)) {
                            *d += row.iter().copied().sum::<T>();
                        }
                    }
                    out.push((b, db));
                }
                if self.needs(*x) {
                    out.push((*x, geo.input_grad(self.data(*w), g, bsz)));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    T::gemm(
                        n, dout, din, T::one(),
                        g, dout as isize, 1,
                        self.data(*w), din as isize, 1,
                        T::zero(), &mut dx, din as isize, 1,
                    );
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(
                        dout, n, din, T::one(),
                        g, 1, dout as isize,
                        self.data(*x), din as isize, 1,
                        T::zero(), &mut dw, din as isize, 1,
                    );
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![T::zero(); dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    out.push((b, db));
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = node.value.shape()[1];
                let bd = self.data(*b);
                if self.needs(*a) {
                    // dA = dC B^T, with B stored k x n (or n x k when trans_b).
                    let (rsb, csb) = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m, n, k, T::one(),
                        g, n as isize, 1,
                        bd, rsb, csb,
                        T::zero(), &mut da, k as isize, 1,
                    );
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let ad = self.data(*a);
                    let mut db = vec![T::zero(); k * n];
                    if *trans_b {
                        // dB (n x k) = dC^T A.
                        T::gemm(
                            n, m, k, T::one(),
                            g, 1, n as isize,
                            ad, k as isize, 1,
                            T::zero(), &mut db, k as isize, 1,
                        );
                    } else {
                        // dB (k x n) = A^T dC.
                        T::gemm(
                            k, m, n, T::one(),
                            ad, 1, k as isize,
                            g, n as isize, 1,
                            T::zero(), &mut db, n as isize, 1,
                        );
                    }
                    out.push((*b, db));
                }
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                out.push((*x, g.iter().zip(xd).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }).collect()));
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                out.push((*x, g.iter().zip(y).map(|(&gv, &s)| gv * s * (T::one() - s)).collect()));
            }
            Op::SoftmaxRows(x) => {
                let d = node.value.shape()[1];
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(d).zip(y.chunks(d)).zip(g.chunks(d)) {
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let s = self.shape(*x);
                let (b, c) = (s[0], s[1]);
                let l = if s.len() == 3 { s[2] } else { 1 };
                let gam = self.data(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * l;
                        for idx in off..off + l {
                            sum_g[ci] += g[idx];
                            sum_gx[ci] += g[idx] * xhat[idx];
                        }
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let nf = T::from_f64((b * l) as f64);
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = (bi * c + ci) * l;
                            let k = gam[ci] * inv_std[ci];
                            for idx in off..off + l {
                                dx[idx] = if *train {
                                    k * (g[idx] - sum_g[ci] / nf - xhat[idx] * sum_gx[ci] / nf)
                                } else {
                                    k * g[idx]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gamma) {
                    out.push((*gamma, sum_gx));
                }
                if self.needs(*beta) {
                    out.push((*beta, sum_g));
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let d = node.value.shape()[1];
                let df = T::from_f64(d as f64);
                let mut dx = vec![T::zero(); g.len()];
                for (r, ((dr, hr), gr)) in dx.chunks_mut(d).zip(xhat.chunks(d)).zip(g.chunks(d)).enumerate() {
                    let mg = gr.iter().copied().sum::<T>() / df;
                    let mgx = gr.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / df;
                    for ((o, &h), &gv) in dr.iter_mut().zip(hr).zip(gr) {
                        *o = inv_std[r] * (gv - mg - h * mgx);
                    }
                }
                out.push((*x, dx));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().map(|&v| -v).collect()));
                }
            }
            Op::Scale(x, s) => out.push((*x, g.iter().map(|&v| v * *s).collect())),
            Op::GlobalAvgPool(x) => {
                let l = self.shape(*x)[2];
                let lf = T::from_f64(l as f64);
                let mut dx = Vec::with_capacity(g.len() * l);
                for &gv in g {
                    dx.extend(std::iter::repeat_n(gv / lf, l));
                }
                out.push((*x, dx));
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        out.push((p, dp));
                    }
                    offset += w;
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                out.push((*x, vec![g[0] / T::from_f64(n as f64); n]));
            }
            Op::LogMeanExp(x) => {
                let xd = self.data(*x);
                let lme = node.value.item();
                let nf = T::from_f64(xd.len() as f64);
                out.push((*x, xd.iter().map(|&v| g[0] * (v - lme).exp() / nf).collect()));
            }
            Op::BceWithLogits { logits, labels } => {
                let z = self.data(*logits);
                let nf = T::from_f64(z.len() as f64);
                out.push((*logits, z.iter().zip(labels).map(|(&zv, &y)| g[0] * (sigmoid(zv) - y) / nf).collect()));
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let c = self.shape(*logits)[1];
                let nf = T::from_f64(targets.len() as f64);
                let mut dz: Vec<T> = probs.iter().map(|&p| g[0] * p / nf).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dz[r * c + t] -= g[0] / nf;
                }
                out.push((*logits, dz));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    len: usize,
    cout: usize,
    kw: usize,
    lout: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Source index in the unpadded input for output `o` and tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize) -> Option<usize> {
        let pos = o * self.stride + k;
        (pos >= self.pad && pos - self.pad < self.len).then(|| pos - self.pad)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        for ci in 0..self.cin {
            let xr = &x[ci * self.len..(ci + 1) * self.len];
            for k in 0..self.kw {
                let row = &mut cols[(ci * self.kw + k) * self.lout..(ci * self.kw + k + 1) * self.lout];
                for (o, c) in row.iter_mut().enumerate() {
                    *c = self.src(o, k).map_or(T::zero(), |s| xr[s]);
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        for ci in 0..self.cin {
            let xr = &mut dx[ci * self.len..(ci + 1) * self.len];
            for k in 0..self.kw {
                let row = &cols[(ci * self.kw + k) * self.lout..(ci * self.kw + k + 1) * self.lout];
                for (o, &c) in row.iter().enumerate() {
                    if let Some(s) = self.src(o, k) {
                        xr[s] += c;
                    }
                }
            }
        }
    }

    fn weight_grad<T: Real>(&self, x: &[T], g: &[T], bsz: usize) -> Vec<T> {
        let wlen = self.cout * self.cin * self.kw;
        let ck = self.cin * self.kw;
        let chunks: Vec<usize> = (0..bsz).step_by(CONV_GRAD_CHUNK).collect();
        let partials: Vec<Vec<T>> = chunks
            .par_iter()
            .map(|&start| {
                let mut dw = vec![T::zero(); wlen];
                let mut cols = vec![T::zero(); ck * self.lout];
                for b in start..(start + CONV_GRAD_CHUNK).min(bsz) {
                    self.im2col(&x[b * self.cin * self.len..(b + 1) * self.cin * self.len], &mut cols);
                    let gb = &g[b * self.cout * self.lout..(b + 1) * self.cout * self.lout];
                    // dW += dY_b (cout x lout) cols^T (lout x ck)
                    T::gemm(
                        self.cout, self.lout, ck, T::one(),
                        gb, self.lout as isize, 1,
                        &cols, 1, self.lout as isize,
                        T::one(), &mut dw, ck as isize, 1,
                    );
                }
                dw
            })
            .collect();
        let mut iter = partials.into_iter();
        let mut total = iter.next().unwrap_or_else(|| vec![T::zero(); wlen]);
        for p in iter {
            total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        total
    }

    fn input_grad<T: Real>(&self, w: &[T], g: &[T], bsz: usize) -> Vec<T> {
        let ck = self.cin * self.kw;
        let mut dx = vec![T::zero(); bsz * self.cin * self.len];
        dx.par_chunks_mut(self.cin * self.len)
            .zip(g.par_chunks(self.cout * self.lout))
            .for_each_init(
                || vec![T::zero(); ck * self.lout],
                |cols, (dxb, gb)| {
                    // dcols (ck x lout) = W^T (ck x cout) dY_b (cout x lout)
                    T::gemm(
                        ck, self.cout, self.lout, T::one(),
                        w, 1, ck as isize,
                        gb, self.lout as isize, 1,
                        T::zero(), cols, self.lout as isize, 1,
                    );
                    self.col2im(cols, dxb);
                },
            );
        dx
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn log_mean_exp<T: Real>(x: &[T]) -> T {
    log_sum_exp(x) - T::from_f64(x.len() as f64).ln()
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Mean BCE from logits (no explicit sigmoid).
pub fn bce_with_logits<T: Real>(logits: &[T], labels: &[T]) -> T {
    let total: T = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
        .sum();
    total / T::from_f64(logits.len() as f64)
}
