//! Wengert-list reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the list is already a
//! topological order; `backward` walks it once in reverse.

use std::sync::Arc;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a batched `[batch·len, d]` activation for multi-head attention.
/// `keep[b·len + j]` says whether key `j` of sequence `b` may be attended to.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnLayout {
    pub batch: usize,
    pub len: usize,
    pub heads: usize,
    pub keep: Vec<bool>,
}

impl AttnLayout {
    pub fn new(batch: usize, len: usize, heads: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != batch * len {
            return Err(Error::Shape {
                op: "attn_layout",
                lhs: vec![batch, len],
                rhs: vec![keep.len()],
            });
        }
        if heads == 0 {
            return Err(Error::contract("attention needs at least one head"));
        }
        Ok(AttnLayout {
            batch,
            len,
            heads,
            keep,
        })
    }
}

/// Source of one output row of [`Tape::gather_rows`]: row `row` of input
/// `part`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowRef {
    pub part: u32,
    pub row: u32,
}

impl RowRef {
    pub fn new(part: usize, row: usize) -> Self {
        RowRef {
            part: part as u32,
            row: row as u32,
        }
    }
}

enum Op<T> {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Gelu {
        x: Var,
    },
    SoftmaxMasked {
        keep: Vec<bool>,
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: Arc<AttnLayout>,
    },
    GatherRows {
        parts: Vec<Var>,
        refs: Vec<RowRef>,
    },
    MaskedMse {
        pred: Var,
        rows: Vec<usize>,
        target: Tensor<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    Sum {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    saved: Vec<T>,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn expect_matrix<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, saved: Vec<T>, name: &str) -> Result<Var> {
        value.check_finite(name)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            saved,
            param: None,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::MatMul { a, b } | Op::Add { a, b } => vec![*a, *b],
            Op::Scale { x, .. } | Op::Gelu { x } | Op::Sum { x } => vec![*x],
            Op::SoftmaxMasked { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::GatherRows { parts, .. } => parts.clone(),
            Op::MaskedMse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            saved: vec![],
            param: None,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free input whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let v = self.constant(value);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Bind a stored parameter; its gradient is accumulated by
    /// [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone());
        self.nodes[v.0].param = Some(id);
        v
    }

    /// `x·W + b` for `x[n×p]`, `W[p×q]`, `b[q]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, p) = expect_matrix(xv, "dense_affine")?;
        let (p2, q) = expect_matrix(wv, "dense_affine")?;
        if p != p2 {
            return Err(Error::Shape {
                op: "dense_affine",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let mut out = kernels::matmul(xv.data(), wv.data(), n, p, q);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.numel() != q {
                return Err(Error::Shape {
                    op: "dense_affine bias",
                    lhs: vec![q],
                    rhs: bv.shape().to_vec(),
                });
            }
            let bias = bv.data();
            for row in out.chunks_mut(q) {
                for (o, &bb) in row.iter_mut().zip(bias) {
                    *o = *o + bb;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![n, q], out),
            Op::Affine { x, w, b },
            vec![],
            "dense_affine",
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, p) = expect_matrix(av, "matmul")?;
        let (p2, q) = expect_matrix(bv, "matmul")?;
        if p != p2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = kernels::matmul(av.data(), bv.data(), n, p, q);
        self.push(
            Tensor::from_parts(vec![n, q], out),
            Op::MatMul { a, b },
            vec![],
            "matmul",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Add { a, b }, vec![], "add")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::of(factor);
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v * f).collect();
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Scale { x, factor: f },
            vec![],
            "scale",
        )
    }

    /// Per-row standardization with population variance, then `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let xv = self.value(x);
        let (n, d) = expect_matrix(xv, "layer_norm")?;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        if g.len() != d || b.len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: vec![d],
                rhs: vec![g.len(), b.len()],
            });
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let mut out = vec![T::zero(); n * d];
        // saved: x̂ (n·d) followed by 1/σ (n)
        let mut saved = vec![T::zero(); n * d + n];
        let (xhat_all, rstd_all) = saved.split_at_mut(n * d);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            rstd_all[i] = rstd;
            for j in 0..d {
                let xh = (row[j] - mean) * rstd;
                xhat_all[i * d + j] = xh;
                out[i * d + j] = xh * g[j] + b[j];
            }
        }
        self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::LayerNorm { x, gamma, beta },
            saved,
            "layer_norm",
        )
    }

    /// Tanh-approximated GELU, see [`kernels::gelu`].
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Gelu { x }, vec![], "gelu")
    }

    /// Row softmax of `scores[n×m]` over the columns where `keep` is true.
    /// Excluded columns get probability exactly zero.
    pub fn softmax_masked(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        let (n, m) = expect_matrix(xv, "softmax_masked")?;
        if keep.len() != m {
            return Err(Error::Shape {
                op: "softmax_masked",
                lhs: vec![m],
                rhs: vec![keep.len()],
            });
        }
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            if !kernels::softmax_masked_row(xv.row(i), keep, &mut out[i * m..(i + 1) * m]) {
                return Err(Error::DegenerateRow { row: i });
            }
        }
        self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::SoftmaxMasked {
                keep: keep.to_vec(),
                x,
            },
            vec![],
            "softmax_masked",
        )
    }

    /// Multi-head scaled dot-product attention over padded sequences.
    ///
    /// `q`, `k`, `v` are `[batch·len, d]`; head `h` owns columns
    /// `h·d/heads..(h+1)·d/heads`. Keys with `keep == false` are excluded
    /// from every softmax, so their content cannot reach any output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: Arc<AttnLayout>) -> Result<Var> {
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);
        let (n, d) = expect_matrix(qv, "attention")?;
        for t in [kv, vv] {
            if t.shape() != qv.shape() {
                return Err(Error::Shape {
                    op: "attention",
                    lhs: qv.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let (bsz, len, heads) = (layout.batch, layout.len, layout.heads);
        if n != bsz * len || d % heads != 0 {
            return Err(Error::Shape {
                op: "attention",
                lhs: vec![n, d],
                rhs: vec![bsz, len, heads],
            });
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let keep = &layout.keep;

        let blocks = par::try_map_indexed(bsz * heads, |bh| {
            let (b, h) = (bh / heads, bh % heads);
            let keep_b = &keep[b * len..(b + 1) * len];
            if !keep_b.iter().any(|&k| k) {
                return Err(Error::DegenerateRow { row: b });
            }
            let col = h * dh;
            let mut probs = vec![T::zero(); len * len];
            let mut out = vec![T::zero(); len * dh];
            let mut scores = vec![T::zero(); len];
            for i in 0..len {
                let qi = &qd[(b * len + i) * d + col..][..dh];
                for j in 0..len {
                    if keep_b[j] {
                        let kj = &kd[(b * len + j) * d + col..][..dh];
                        let mut s = T::zero();
                        for c in 0..dh {
                            s = s + qi[c] * kj[c];
                        }
                        scores[j] = s * scale;
                    } else {
                        scores[j] = T::zero();
                    }
                }
                let prow = &mut probs[i * len..(i + 1) * len];
                kernels::softmax_masked_row(&scores, keep_b, prow);
                let orow = &mut out[i * dh..(i + 1) * dh];
                for j in 0..len {
                    if keep_b[j] {
                        let p = prow[j];
                        let vj = &vd[(b * len + j) * d + col..][..dh];
                        for c in 0..dh {
                            orow[c] = orow[c] + p * vj[c];
                        }
                    }
                }
            }
            Ok((probs, out))
        })?;

        let mut out = vec![T::zero(); n * d];
        let mut saved = Vec::with_capacity(bsz * heads * len * len);
        for (bh, (probs, block)) in blocks.into_iter().enumerate() {
            let (b, h) = (bh / heads, bh % heads);
            for i in 0..len {
                out[(b * len + i) * d + h * dh..][..dh]
                    .copy_from_slice(&block[i * dh..(i + 1) * dh]);
            }
            saved.extend_from_slice(&probs);
        }
        self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::Attention { q, k, v, layout },
            saved,
            "attention",
        )
    }

    /// Assemble a matrix whose row `r` is `parts[refs[r].part].row(refs[r].row)`.
    pub fn gather_rows(&mut self, parts: &[Var], refs: Vec<RowRef>) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::contract("gather_rows needs at least one part")),
        };
        for &p in parts {
            let (_, c) = expect_matrix(self.value(p), "gather_rows")?;
            if c != cols {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: vec![cols],
                    rhs: vec![c],
                });
            }
        }
        let mut out = Vec::with_capacity(refs.len() * cols);
        for r in &refs {
            let part = parts
                .get(r.part as usize)
                .ok_or_else(|| Error::contract(format!("gather_rows: no part {}", r.part)))?;
            let pv = self.value(*part);
            if r.row as usize >= pv.rows() {
                return Err(Error::contract(format!(
                    "gather_rows: row {} out of range for part of {} rows",
                    r.row,
                    pv.rows()
                )));
            }
            out.extend_from_slice(pv.row(r.row as usize));
        }
        let n = refs.len();
        self.push(
            Tensor::from_parts(vec![n, cols], out),
            Op::GatherRows {
                parts: parts.to_vec(),
                refs,
            },
            vec![],
            "gather_rows",
        )
    }

    /// `(1/M) Σ_m ‖pred[rows[m]] − target[m]‖²`. Rows of `pred` not listed in
    /// `rows` do not enter the value or the gradient.
    pub fn masked_mse(&mut self, pred: Var, rows: Vec<usize>, target: Tensor<T>) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::contract("masked_mse needs at least one masked slot"));
        }
        let pv = self.value(pred);
        let (n, d) = expect_matrix(pv, "masked_mse")?;
        if target.shape() != [rows.len(), d] {
            return Err(Error::Shape {
                op: "masked_mse",
                lhs: vec![rows.len(), d],
                rhs: target.shape().to_vec(),
            });
        }
        let mut total = T::zero();
        for (m, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::contract(format!("masked_mse row {r} out of range {n}")));
            }
            let mut s = T::zero();
            for (&p, &t) in pv.row(r).iter().zip(target.row(m)) {
                s = s + (p - t) * (p - t);
            }
            total = total + s;
        }
        let loss = total / T::of(rows.len() as f64);
        self.push(
            Tensor::from_parts(vec![1], vec![loss]),
            Op::MaskedMse { pred, rows, target },
            vec![],
            "masked_mse",
        )
    }

    /// Mean softmax cross-entropy of `logits[n×C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = expect_matrix(lv, "cross_entropy")?;
        if labels.len() != n || n == 0 {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: vec![n],
                rhs: vec![labels.len()],
            });
        }
        let keep = vec![true; c];
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for i in 0..n {
            if labels[i] >= c {
                return Err(Error::contract(format!(
                    "label {} out of range for {c} classes",
                    labels[i]
                )));
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            total = total + (lse - row[labels[i]]);
            kernels::softmax_masked_row(row, &keep, &mut probs[i * c..(i + 1) * c]);
        }
        let loss = total / T::of(n as f64);
        self.push(
            Tensor::from_parts(vec![1], vec![loss]),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            probs,
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::from_parts(vec![1], vec![s]), Op::Sum { x }, vec![], "sum")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backprop needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, grads.grads[i].as_ref()) {
                store.accumulate(id, g);
            }
        }
        Ok(grads)
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, delta: Vec<T>| {
            let slot = &mut grads[v.0];
            match slot {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e = *e + d;
                    }
                }
                None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, p) = (xv.shape()[0], xv.shape()[1]);
                let q = wv.shape()[1];
                if needs(*x) {
                    acc(*x, kernels::matmul_nt(g, wv.data(), n, q, p));
                }
                if needs(*w) {
                    acc(*w, kernels::matmul_tn(xv.data(), g, n, p, q));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![T::zero(); q];
                        for row in g.chunks(q) {
                            for (d, &gv) in db.iter_mut().zip(row) {
                                *d = *d + gv;
                            }
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (n, p) = (av.shape()[0], av.shape()[1]);
                let q = bv.shape()[1];
                if needs(*a) {
                    acc(*a, kernels::matmul_nt(g, bv.data(), n, q, p));
                }
                if needs(*b) {
                    acc(*b, kernels::matmul_tn(av.data(), g, n, p, q));
                }
            }
            Op::Add { a, b } => {
                if needs(*a) {
                    acc(*a, g.to_vec());
                }
                if needs(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Scale { x, factor } => {
                acc(*x, g.iter().map(|&v| v * *factor).collect());
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                        .collect(),
                );
            }
            Op::Sum { x } => {
                acc(*x, vec![g[0]; self.value(*x).numel()]);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (n, d) = (node.value.shape()[0], node.value.shape()[1]);
                let (xhat, rstd) = node.saved.split_at(n * d);
                let gam = self.value(*gamma).data();
                if needs(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] = dg[j] + g[i * d + j] * xhat[i * d + j];
                        }
                    }
                    acc(*gamma, dg);
                }
                if needs(*beta) {
                    let mut db = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        for (o, &gv) in db.iter_mut().zip(row) {
                            *o = *o + gv;
                        }
                    }
                    acc(*beta, db);
                }
                if needs(*x) {
                    let dn = T::of(d as f64);
                    let mut dx = vec![T::zero(); n * d];
                    for i in 0..n {
                        let gr = &g[i * d..(i + 1) * d];
                        let xr = &xhat[i * d..(i + 1) * d];
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            mean_dxh = mean_dxh + dxh;
                            mean_dxh_xh = mean_dxh_xh + dxh * xr[j];
                        }
                        mean_dxh = mean_dxh / dn;
                        mean_dxh_xh = mean_dxh_xh / dn;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            dx[i * d + j] = rstd[i] * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SoftmaxMasked { x, keep } => {
                let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                let y = node.value.data();
                let mut dx = vec![T::zero(); n * m];
                for i in 0..n {
                    let yr = &y[i * m..(i + 1) * m];
                    let gr = &g[i * m..(i + 1) * m];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..m {
                        if keep[j] {
                            dx[i * m + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Attention { q, k, v, layout } => {
                let (dq, dk, dv) = self.attention_backward(node, *q, *k, *v, layout, g);
                if needs(*q) {
                    acc(*q, dq);
                }
                if needs(*k) {
                    acc(*k, dk);
                }
                if needs(*v) {
                    acc(*v, dv);
                }
            }
            Op::GatherRows { parts, refs } => {
                let cols = node.value.cols();
                let mut deltas: Vec<Option<Vec<T>>> = parts
                    .iter()
                    .map(|&p| needs(p).then(|| vec![T::zero(); self.value(p).numel()]))
                    .collect();
                for (r, rr) in refs.iter().enumerate() {
                    if let Some(dst) = deltas[rr.part as usize].as_mut() {
                        let row = rr.row as usize;
                        for c in 0..cols {
                            dst[row * cols + c] = dst[row * cols + c] + g[r * cols + c];
                        }
                    }
                }
                for (p, delta) in parts.iter().zip(deltas) {
                    if let Some(delta) = delta {
                        acc(*p, delta);
                    }
                }
            }
            Op::MaskedMse { pred, rows, target } => {
                let pv = self.value(*pred);
                let d = pv.cols();
                let scale = g[0] * T::of(2.0 / rows.len() as f64);
                let mut dp = vec![T::zero(); pv.numel()];
                for (m, &r) in rows.iter().enumerate() {
                    for ((o, &p), &t) in dp[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(pv.row(r))
                        .zip(target.row(m))
                    {
                        *o = *o + scale * (p - t);
                    }
                }
                acc(*pred, dp);
            }
            Op::CrossEntropy { logits, labels } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / T::of(labels.len() as f64);
                let mut dl: Vec<T> = node.saved.iter().map(|&p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    dl[i * c + y] = dl[i * c + y] - scale;
                }
                acc(*logits, dl);
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        node: &Node<T>,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttnLayout,
        g: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let d = self.value(q).cols();
        let (bsz, len, heads) = (layout.batch, layout.len, layout.heads);
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let probs = &node.saved;

        let blocks = par::map_indexed(bsz * heads, |bh| {
            let (b, h) = (bh / heads, bh % heads);
            let keep_b = &layout.keep[b * len..(b + 1) * len];
            let col = h * dh;
            let p = &probs[bh * len * len..(bh + 1) * len * len];
            let span = |i: usize| (b * len + i) * d + col..(b * len + i) * d + col + dh;
            let mut dq = vec![T::zero(); len * dh];
            let mut dk = vec![T::zero(); len * dh];
            let mut dv = vec![T::zero(); len * dh];
            let mut dp = vec![T::zero(); len];
            for i in 0..len {
                let go = &g[span(i)];
                let pr = &p[i * len..(i + 1) * len];
                let mut dot = T::zero();
                for j in 0..len {
                    if keep_b[j] {
                        let vj = &vd[span(j)];
                        let mut s = T::zero();
                        for c in 0..dh {
                            s = s + go[c] * vj[c];
                        }
                        dp[j] = s;
                        dot = dot + pr[j] * s;
                        for c in 0..dh {
                            dv[j * dh + c] = dv[j * dh + c] + pr[j] * go[c];
                        }
                    }
                }
                let qi = &qd[span(i)];
                for j in 0..len {
                    if keep_b[j] {
                        let ds = pr[j] * (dp[j] - dot) * scale;
                        let kj = &kd[span(j)];
                        for c in 0..dh {
                            dq[i * dh + c] = dq[i * dh + c] + ds * kj[c];
                            dk[j * dh + c] = dk[j * dh + c] + ds * qi[c];
                        }
                    }
                }
            }
            (dq, dk, dv)
        });

        let n = bsz * len;
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        for (bh, (bq, bk, bv)) in blocks.into_iter().enumerate() {
            let (b, h) = (bh / heads, bh % heads);
            for i in 0..len {
                let dst = (b * len + i) * d + h * dh;
                dq[dst..dst + dh].copy_from_slice(&bq[i * dh..(i + 1) * dh]);
                dk[dst..dst + dh].copy_from_slice(&bk[i * dh..(i + 1) * dh]);
                dv[dst..dst + dh].copy_from_slice(&bv[i * dh..(i + 1) * dh]);
            }
        }
        (dq, dk, dv)
    }
}
