//! Tape-based reverse-mode differentiation.

use std::collections::HashMap;

use super::kernels::attention::{self, AttnShape};
use super::kernels::conv::{self, ConvGeom};
use super::kernels::resize;
use super::kernels::roi_align::{self, RoiAlignSpec};
use super::linalg::{gemm, MatMut, MatRef};
use super::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    Silu(Var),
    Add(Var, Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
    Reshape(Var),
    ChwToTokens(Var),
    TokensToChw(Var),
    AvgPool { x: Var, kh: usize, kw: usize },
    Upsample(Var),
    Attention { q: Var, k: Var, v: Var, shape: AttnShape, lse: Vec<f64> },
    RoiAlign { feats: Vec<Var>, scales: Vec<f64>, rois: Vec<(usize, [f64; 4])>, spec: RoiAlignSpec },
    CrossEntropy { logits: Var, probs: Vec<f64>, labels: Vec<usize>, weights: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64>, weights: Vec<f64> },
    SmoothL1 { pred: Var, targets: Vec<f64>, weights: Vec<f64>, beta: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; `backward` is unavailable.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            needs_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// `x`: (cin, h, w); `w`: (cout, cin, kh, kw); `b`: (cout).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (cin, h, wd) = self.value(x).dims3();
        let (cout, wcin, kh, kw) = self.value(w).dims4();
        assert_eq!(cin, wcin, "conv input channels {cin} vs weight {wcin}");
        let geom = ConvGeom { cin, h, w: wd, cout, kh, kw, stride, pad };
        let y = conv::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let t = Tensor::new(vec![cout, geom.out_h(), geom.out_w()], y);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(t, Op::Conv2d { x, w, b, geom }, &parents)
    }

    /// `x`: (n, in); `w`: (out, in); `b`: (out). Returns (n, out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, din) = self.value(x).dims2();
        let (dout, win) = self.value(w).dims2();
        assert_eq!(din, win, "linear input width {din} vs weight {win}");
        let mut y = vec![0.0; n * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            1.0,
            MatRef::row_major(self.value(x).data(), n, din),
            MatRef::row_major(self.value(w).data(), dout, din).t(),
            if b.is_some() { 1.0 } else { 0.0 },
            MatMut::row_major(&mut y, n, dout),
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(Tensor::new(vec![n, dout], y), Op::Linear { x, w, b }, &parents)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| silu(a)).collect());
        self.push(t, Op::Silu(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sum(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut t = self.value(vars[0]).clone();
        for v in &vars[1..] {
            t.add_assign(self.value(*v));
        }
        self.push(t, Op::Sum(vars.to_vec()), vars)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut t = self.value(x).clone();
        t.scale(factor);
        self.push(t, Op::Scale(x, factor), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = self.value(x).clone().reshape(shape);
        self.push(t, Op::Reshape(x), &[x])
    }

    /// (c, h, w) -> (h*w, c)
    pub fn chw_to_tokens(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let t = Tensor::new(vec![h * w, c], transpose(self.value(x).data(), c, h * w));
        self.push(t, Op::ChwToTokens(x), &[x])
    }

    /// (h*w, c) -> (c, h, w)
    pub fn tokens_to_chw(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (n, c) = self.value(x).dims2();
        assert_eq!(n, h * w);
        let t = Tensor::new(vec![c, h, w], transpose(self.value(x).data(), n, c));
        self.push(t, Op::TokensToChw(x), &[x])
    }

    pub fn avg_pool(&mut self, x: Var, kh: usize, kw: usize) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let y = resize::avg_pool_forward(self.value(x).data(), c, h, w, kh, kw);
        let t = Tensor::new(vec![c, resize::pooled_len(h, kh), resize::pooled_len(w, kw)], y);
        self.push(t, Op::AvgPool { x, kh, kw }, &[x])
    }

    pub fn upsample(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let y = resize::upsample_forward(self.value(x).data(), c, h, w, oh, ow);
        self.push(Tensor::new(vec![c, oh, ow], y), Op::Upsample(x), &[x])
    }

    /// `q`: (l, d), `k`/`v`: (s, d). Returns (l, d).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (l, d) = self.value(q).dims2();
        let (s, dk) = self.value(k).dims2();
        assert_eq!(d, dk);
        assert_eq!(self.value(v).dims2(), (s, d));
        assert!(heads > 0 && d % heads == 0, "dim {d} not divisible by {heads} heads");
        let shape = AttnShape { queries: l, keys: s, dim: d, heads };
        let (out, lse) = attention::forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            &shape,
        );
        let lse = if self.grad_enabled { lse } else { Vec::new() };
        self.push(Tensor::new(vec![l, d], out), Op::Attention { q, k, v, shape, lse }, &[q, k, v])
    }

    /// Pools each `(level, box)` from `feats[level]` (scaled by
    /// `scales[level]`). All levels must share the channel count. Returns
    /// (rois, c, out_h, out_w) in input order.
    pub fn roi_align(
        &mut self,
        feats: &[Var],
        scales: &[f64],
        rois: &[(usize, [f64; 4])],
        spec: RoiAlignSpec,
    ) -> Var {
        let c = self.value(feats[0]).dims3().0;
        let bins = spec.out_h * spec.out_w;
        let mut out = vec![0.0; rois.len() * c * bins];
        for (lvl, &f) in feats.iter().enumerate() {
            let idx: Vec<usize> = (0..rois.len()).filter(|&i| rois[i].0 == lvl).collect();
            if idx.is_empty() {
                continue;
            }
            let boxes: Vec<[f64; 4]> = idx.iter().map(|&i| rois[i].1).collect();
            let fv = self.value(f);
            let pooled = roi_align::forward(fv.data(), fv.dims3(), scales[lvl], &boxes, &spec);
            for (j, &i) in idx.iter().enumerate() {
                out[i * c * bins..(i + 1) * c * bins]
                    .copy_from_slice(&pooled[j * c * bins..(j + 1) * c * bins]);
            }
        }
        let t = Tensor::new(vec![rois.len(), c, spec.out_h, spec.out_w], out);
        let op = Op::RoiAlign {
            feats: feats.to_vec(),
            scales: scales.to_vec(),
            rois: rois.to_vec(),
            spec,
        };
        self.push(t, op, feats)
    }

    /// Weighted softmax cross-entropy: `sum_i w_i * -log softmax(logits_i)[label_i]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>, weights: Vec<f64>) -> Var {
        let (n, k) = self.value(logits).dims2();
        assert_eq!(labels.len(), n);
        assert_eq!(weights.len(), n);
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &x[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / z;
            }
            loss += weights[i] * (m + z.ln() - row[labels[i]]);
        }
        let op = Op::CrossEntropy { logits, probs, labels, weights };
        self.push(Tensor::scalar(loss), op, &[logits])
    }

    /// Weighted binary cross-entropy on logits, element-wise over any shape.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>, weights: Vec<f64>) -> Var {
        let x = self.value(logits).data();
        assert_eq!(x.len(), targets.len());
        assert_eq!(x.len(), weights.len());
        let loss = x
            .iter()
            .zip(&targets)
            .zip(&weights)
            .filter(|(_, w)| **w != 0.0)
            .map(|((&x, &t), &w)| w * (x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()))
            .sum();
        let op = Op::BceWithLogits { logits, targets, weights };
        self.push(Tensor::scalar(loss), op, &[logits])
    }

    /// Weighted smooth-L1 (Huber with transition `beta`); `beta = 0` is L1.
    pub fn smooth_l1(&mut self, pred: Var, targets: Vec<f64>, weights: Vec<f64>, beta: f64) -> Var {
        let x = self.value(pred).data();
        assert_eq!(x.len(), targets.len());
        assert_eq!(x.len(), weights.len());
        let loss = x
            .iter()
            .zip(&targets)
            .zip(&weights)
            .filter(|(_, w)| **w != 0.0)
            .map(|((&p, &t), &w)| {
                let d = (p - t).abs();
                w * if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta }
            })
            .sum();
        let op = Op::SmoothL1 { pred, targets, weights, beta };
        self.push(Tensor::scalar(loss), op, &[pred])
    }

    /// Back-propagates from the scalar `loss`; returns one optional gradient
    /// per parameter of a store with `n_params` entries.
    pub fn backward(&self, loss: Var, n_params: usize) -> Vec<Option<Tensor>> {
        assert!(self.grad_enabled, "backward on a no-grad graph");
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut emit = |v: Var, t: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out[id.0] = Some(g);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let need_dx = self.nodes[x.0].needs_grad;
                    let cg = conv::backward(xv.data(), wv.data(), g.data(), geom, need_dx);
                    if let Some(dx) = cg.dx {
                        emit(*x, Tensor::new(xv.shape().to_vec(), dx));
                    }
                    emit(*w, Tensor::new(wv.shape().to_vec(), cg.dw));
                    if let Some(b) = b {
                        emit(*b, Tensor::new(vec![geom.cout], cg.db));
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, din) = xv.dims2();
                    let (dout, _) = wv.dims2();
                    let gm = MatRef::row_major(g.data(), n, dout);
                    if self.nodes[x.0].needs_grad {
                        let mut dx = vec![0.0; n * din];
                        gemm(1.0, gm, MatRef::row_major(wv.data(), dout, din), 0.0, MatMut::row_major(&mut dx, n, din));
                        emit(*x, Tensor::new(vec![n, din], dx));
                    }
                    let mut dw = vec![0.0; dout * din];
                    gemm(1.0, gm.t(), MatRef::row_major(xv.data(), n, din), 0.0, MatMut::row_major(&mut dw, dout, din));
                    emit(*w, Tensor::new(vec![dout, din], dw));
                    if let Some(b) = b {
                        let mut db = vec![0.0; dout];
                        for row in g.data().chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        emit(*b, Tensor::new(vec![dout], db));
                    }
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let d = xv.data().iter().zip(g.data()).map(|(&a, &gy)| gy * silu_grad(a)).collect();
                    emit(*x, Tensor::new(xv.shape().to_vec(), d));
                }
                Op::Add(a, b) => {
                    emit(*a, g.clone());
                    emit(*b, g);
                }
                Op::Sum(vs) => {
                    for v in vs {
                        emit(*v, g.clone());
                    }
                }
                Op::Scale(x, f) => {
                    let mut t = g;
                    t.scale(*f);
                    emit(*x, t);
                }
                Op::Reshape(x) => {
                    emit(*x, g.reshape(self.value(*x).shape().to_vec()));
                }
                Op::ChwToTokens(x) => {
                    let (c, h, w) = self.value(*x).dims3();
                    emit(*x, Tensor::new(vec![c, h, w], transpose(g.data(), h * w, c)));
                }
                Op::TokensToChw(x) => {
                    let (n, c) = self.value(*x).dims2();
                    emit(*x, Tensor::new(vec![n, c], transpose(g.data(), c, n)));
                }
                Op::AvgPool { x, kh, kw } => {
                    let (c, h, w) = self.value(*x).dims3();
                    let d = resize::avg_pool_backward(g.data(), c, h, w, *kh, *kw);
                    emit(*x, Tensor::new(vec![c, h, w], d));
                }
                Op::Upsample(x) => {
                    let (c, h, w) = self.value(*x).dims3();
                    let (_, oh, ow) = g.dims3();
                    let d = resize::upsample_backward(g.data(), c, h, w, oh, ow);
                    emit(*x, Tensor::new(vec![c, h, w], d));
                }
                Op::Attention { q, k, v, shape, lse } => {
                    let ag = attention::backward(
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        node.value.data(),
                        lse,
                        g.data(),
                        shape,
                    );
                    emit(*q, Tensor::new(vec![shape.queries, shape.dim], ag.dq));
                    emit(*k, Tensor::new(vec![shape.keys, shape.dim], ag.dk));
                    emit(*v, Tensor::new(vec![shape.keys, shape.dim], ag.dv));
                }
                Op::RoiAlign { feats, scales, rois, spec } => {
                    let (_, c, oh, ow) = g.dims4();
                    let bins = oh * ow;
                    for (lvl, &f) in feats.iter().enumerate() {
                        let idx: Vec<usize> = (0..rois.len()).filter(|&i| rois[i].0 == lvl).collect();
                        if idx.is_empty() {
                            continue;
                        }
                        let boxes: Vec<[f64; 4]> = idx.iter().map(|&i| rois[i].1).collect();
                        let mut dsub = Vec::with_capacity(idx.len() * c * bins);
                        for &i in &idx {
                            dsub.extend_from_slice(&g.data()[i * c * bins..(i + 1) * c * bins]);
                        }
                        let fv = self.value(f);
                        let d = roi_align::backward(&dsub, fv.dims3(), scales[lvl], &boxes, spec);
                        emit(f, Tensor::new(fv.shape().to_vec(), d));
                    }
                }
                Op::CrossEntropy { logits, probs, labels, weights } => {
                    let (n, k) = self.value(*logits).dims2();
                    let gy = g.item();
                    let mut d = probs.clone();
                    for i in 0..n {
                        let w = weights[i] * gy;
                        d[i * k + labels[i]] -= 1.0;
                        d[i * k..(i + 1) * k].iter_mut().for_each(|v| *v *= w);
                    }
                    emit(*logits, Tensor::new(vec![n, k], d));
                }
                Op::BceWithLogits { logits, targets, weights } => {
                    let xv = self.value(*logits);
                    let gy = g.item();
                    let d = xv
                        .data()
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&x, &t), &w)| {
                            if w == 0.0 {
                                0.0
                            } else {
                                gy * w * (1.0 / (1.0 + (-x).exp()) - t)
                            }
                        })
                        .collect();
                    emit(*logits, Tensor::new(xv.shape().to_vec(), d));
                }
                Op::SmoothL1 { pred, targets, weights, beta } => {
                    let xv = self.value(*pred);
                    let gy = g.item();
                    let d = xv
                        .data()
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&p, &t), &w)| {
                            if w == 0.0 {
                                return 0.0;
                            }
                            let diff = p - t;
                            let s = if diff.abs() < *beta { diff / beta } else { diff.signum() };
                            gy * w * s
                        })
                        .collect();
                    emit(*pred, Tensor::new(xv.shape().to_vec(), d));
                }
            }
        }
        out
    }
}
