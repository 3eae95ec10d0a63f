//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Operations are recorded in execution order during the forward pass; the
//! backward pass walks the tape once in reverse. The tape is single-owner
//! and consumed by `backward`.

use crate::error::{Error, Result};
use crate::numcore::kernels;
use crate::numcore::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Attention masking pattern applied inside the masked softmax.
///
/// Masks are structural (no gradient); lengths are per-sequence key counts.
#[derive(Debug, Clone)]
pub enum AttnMask {
    /// Query i attends to keys 0..=i.
    Causal,
    /// Every query attends to every key.
    Full,
    /// Keys at positions >= lens[batch] are hidden (bidirectional otherwise).
    KeyPadding(Vec<usize>),
    /// Causal combined with per-sequence key padding.
    CausalKeyPadding(Vec<usize>),
}

impl AttnMask {
    /// True when query `q` may attend to key `k` in sequence `b`.
    pub fn allows(&self, b: usize, q: usize, k: usize) -> bool {
        match self {
            AttnMask::Causal => k <= q,
            AttnMask::Full => true,
            AttnMask::KeyPadding(lens) => k < lens[b],
            AttnMask::CausalKeyPadding(lens) => k <= q && k < lens[b],
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    BatchedNt(Var, Var),
    BatchedNn(Var, Var),
    SplitHeads { x: Var, batch: usize, heads: usize },
    MergeHeads { x: Var },
    Gelu(Var),
    SoftmaxMasked { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, stats: Vec<(f64, f64)> },
    Gather { table: Var, ids: Vec<u32> },
    SelectRows { x: Var, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<u32>, weights: Vec<f64>, total_weight: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Matmul(..) => "matmul",
            Op::MatmulNt(..) => "matmul_nt",
            Op::BatchedNt(..) => "batched_nt",
            Op::BatchedNn(..) => "batched_nn",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::Gelu(..) => "gelu",
            Op::SoftmaxMasked { .. } => "softmax_masked",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
            Op::SelectRows { .. } => "select_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires: bool,
}

/// Gradients produced by `Tape::backward`, indexed by the originating `Var`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}

/// Single-owner record of a forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    nonfinite: Option<(usize, &'static str)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), nonfinite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        let idx = self.nodes.len();
        if self.nonfinite.is_none() && !value.all_finite() {
            self.nonfinite = Some((idx, op.name()));
        }
        self.nodes.push(Node { value, op, requires });
        Var(idx)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    /// Value of a recorded node, surfacing the first non-finite op if any.
    pub fn checked_value(&self, v: Var) -> Result<&Tensor> {
        if let Some((idx, name)) = self.nonfinite {
            return Err(Error::Numeric(format!(
                "non-finite value produced by operation '{name}' (node {idx})"
            )));
        }
        Ok(self.val(v))
    }

    /// Raw value access; prefer `checked_value` on exposed paths.
    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires = t.requires_grad();
        self.push(t, Op::Leaf, requires)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "add: shape mismatch");
        let data: Vec<f64> = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.val(a).shape().to_vec();
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Add(a, b), req)
    }

    /// x: [n, d] plus row vector b: [d] broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (n, d) = rows_cols(self.val(x).shape());
        assert_eq!(self.val(b).shape(), [d], "add_row: bias shape mismatch");
        let mut data = self.val(x).data().to_vec();
        let brow = self.val(b).data();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += brow[j];
            }
        }
        let shape = self.val(x).shape().to_vec();
        let req = self.req(x) || self.req(b);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::AddRow(x, b), req)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "sub: shape mismatch");
        let data: Vec<f64> = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.val(a).shape().to_vec();
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Sub(a, b), req)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "mul: shape mismatch");
        let data: Vec<f64> = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.val(a).shape().to_vec();
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Mul(a, b), req)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.val(a).data().iter().map(|x| x * c).collect();
        let shape = self.val(a).shape().to_vec();
        let req = self.req(a);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Scale(a, c), req)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.val(a).data().iter().map(|x| x * x).collect();
        let shape = self.val(a).shape().to_vec();
        let req = self.req(a);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Square(a), req)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.val(a).data().iter().sum();
        let req = self.req(a);
        self.push(Tensor::scalar(s), Op::Sum(a), req)
    }

    /// a: [n, k] times b: [k, m].
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = rows_cols(self.val(a).shape());
        let (k2, m) = rows_cols(self.val(b).shape());
        assert_eq!(k, k2, "matmul: inner dimension mismatch");
        let mut data = vec![0.0; n * m];
        kernels::matmul_nn_acc(self.val(a).data(), self.val(b).data(), &mut data, n, k, m);
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(vec![n, m], data).unwrap(), Op::Matmul(a, b), req)
    }

    /// a: [n, k] times b^T where b: [m, k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = rows_cols(self.val(a).shape());
        let (m, k2) = rows_cols(self.val(b).shape());
        assert_eq!(k, k2, "matmul_nt: inner dimension mismatch");
        let mut data = vec![0.0; n * m];
        kernels::matmul_nt_acc(self.val(a).data(), self.val(b).data(), &mut data, n, k, m);
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(vec![n, m], data).unwrap(), Op::MatmulNt(a, b), req)
    }

    /// a: [.., n, k] times b^T per leading slice where b: [.., m, k].
    pub fn batched_nt(&mut self, a: Var, b: Var) -> Var {
        let (lead, n, k) = batched_dims(self.val(a).shape());
        let (lead2, m, k2) = batched_dims(self.val(b).shape());
        assert_eq!(lead, lead2, "batched_nt: leading dims mismatch");
        assert_eq!(k, k2, "batched_nt: inner dimension mismatch");
        let batches: usize = lead.iter().product();
        let mut data = vec![0.0; batches * n * m];
        for i in 0..batches {
            kernels::matmul_nt_acc(
                &self.val(a).data()[i * n * k..(i + 1) * n * k],
                &self.val(b).data()[i * m * k..(i + 1) * m * k],
                &mut data[i * n * m..(i + 1) * n * m],
                n,
                k,
                m,
            );
        }
        let mut shape = lead;
        shape.push(n);
        shape.push(m);
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::BatchedNt(a, b), req)
    }

    /// a: [.., n, k] times b: [.., k, m] per leading slice.
    pub fn batched_nn(&mut self, a: Var, b: Var) -> Var {
        let (lead, n, k) = batched_dims(self.val(a).shape());
        let (lead2, k2, m) = batched_dims(self.val(b).shape());
        assert_eq!(lead, lead2, "batched_nn: leading dims mismatch");
        assert_eq!(k, k2, "batched_nn: inner dimension mismatch");
        let batches: usize = lead.iter().product();
        let mut data = vec![0.0; batches * n * m];
        for i in 0..batches {
            kernels::matmul_nn_acc(
                &self.val(a).data()[i * n * k..(i + 1) * n * k],
                &self.val(b).data()[i * k * m..(i + 1) * k * m],
                &mut data[i * n * m..(i + 1) * n * m],
                n,
                k,
                m,
            );
        }
        let mut shape = lead;
        shape.push(n);
        shape.push(m);
        let req = self.req(a) || self.req(b);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::BatchedNn(a, b), req)
    }

    /// x: [batch*len, d] -> [batch, heads, len, d/heads].
    pub fn split_heads(&mut self, x: Var, batch: usize, heads: usize) -> Var {
        let (n, d) = rows_cols(self.val(x).shape());
        assert_eq!(n % batch, 0, "split_heads: rows not divisible by batch");
        assert_eq!(d % heads, 0, "split_heads: dim not divisible by heads");
        let len = n / batch;
        let dh = d / heads;
        let src = self.val(x).data();
        let mut data = vec![0.0; n * d];
        for b in 0..batch {
            for h in 0..heads {
                for l in 0..len {
                    let srow = &src[(b * len + l) * d + h * dh..(b * len + l) * d + (h + 1) * dh];
                    let dst = ((b * heads + h) * len + l) * dh;
                    data[dst..dst + dh].copy_from_slice(srow);
                }
            }
        }
        let req = self.req(x);
        self.push(
            Tensor::from_vec(vec![batch, heads, len, dh], data).unwrap(),
            Op::SplitHeads { x, batch, heads },
            req,
        )
    }

    /// x: [batch, heads, len, dh] -> [batch*len, heads*dh].
    pub fn merge_heads(&mut self, x: Var) -> Var {
        let shape = self.val(x).shape().to_vec();
        assert_eq!(shape.len(), 4, "merge_heads expects [b,h,l,dh]");
        let (batch, heads, len, dh) = (shape[0], shape[1], shape[2], shape[3]);
        let d = heads * dh;
        let src = self.val(x).data();
        let mut data = vec![0.0; batch * len * d];
        for b in 0..batch {
            for h in 0..heads {
                for l in 0..len {
                    let s = ((b * heads + h) * len + l) * dh;
                    let dst = (b * len + l) * d + h * dh;
                    data[dst..dst + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        let req = self.req(x);
        self.push(
            Tensor::from_vec(vec![batch * len, d], data).unwrap(),
            Op::MergeHeads { x },
            req,
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.val(a).data().iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.val(a).shape().to_vec();
        let req = self.req(a);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Gelu(a), req)
    }

    /// Softmax over the last axis of [b, h, lq, lk] scores under an attention mask.
    pub fn softmax_masked(&mut self, x: Var, mask: AttnMask) -> Var {
        let shape = self.val(x).shape().to_vec();
        assert_eq!(shape.len(), 4, "softmax_masked expects [b,h,lq,lk]");
        let (bsz, heads, lq, lk) = (shape[0], shape[1], shape[2], shape[3]);
        let src = self.val(x).data();
        let mut data = vec![0.0; src.len()];
        for b in 0..bsz {
            for h in 0..heads {
                for q in 0..lq {
                    let off = ((b * heads + h) * lq + q) * lk;
                    let row = &src[off..off + lk];
                    let out = &mut data[off..off + lk];
                    let mut max = f64::NEG_INFINITY;
                    for (k, &v) in row.iter().enumerate() {
                        if mask.allows(b, q, k) && v > max {
                            max = v;
                        }
                    }
                    let mut sum = 0.0;
                    for (k, v) in out.iter_mut().enumerate() {
                        if mask.allows(b, q, k) {
                            *v = (row[k] - max).exp();
                            sum += *v;
                        }
                    }
                    for v in out.iter_mut() {
                        *v /= sum;
                    }
                }
            }
        }
        let req = self.req(x);
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::SoftmaxMasked { x }, req)
    }

    /// Row-wise layer norm with learned gain/bias over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (n, d) = rows_cols(self.val(x).shape());
        assert_eq!(self.val(gain).shape(), [d], "layer_norm: gain shape mismatch");
        assert_eq!(self.val(bias).shape(), [d], "layer_norm: bias shape mismatch");
        let mut data = vec![0.0; n * d];
        let stats = kernels::layer_norm_rows(
            self.val(x).data(),
            self.val(gain).data(),
            self.val(bias).data(),
            &mut data,
            n,
            d,
        );
        let shape = self.val(x).shape().to_vec();
        let req = self.req(x) || self.req(gain) || self.req(bias);
        self.push(
            Tensor::from_vec(shape, data).unwrap(),
            Op::LayerNorm { x, gain, bias, stats },
            req,
        )
    }

    /// Row lookup: table [v, d] by ids -> [ids.len(), d].
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let (v, d) = rows_cols(self.val(table).shape());
        let src = self.val(table).data();
        let mut data = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            assert!(id < v, "gather: id {id} out of range {v}");
            data[i * d..(i + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        let req = self.req(table);
        self.push(
            Tensor::from_vec(vec![ids.len(), d], data).unwrap(),
            Op::Gather { table, ids: ids.to_vec() },
            req,
        )
    }

    /// Select rows of x: [n, d] -> [rows.len(), d].
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let (n, d) = rows_cols(self.val(x).shape());
        let src = self.val(x).data();
        let mut data = vec![0.0; rows.len() * d];
        for (i, &r) in rows.iter().enumerate() {
            assert!(r < n, "select_rows: row {r} out of range {n}");
            data[i * d..(i + 1) * d].copy_from_slice(&src[r * d..(r + 1) * d]);
        }
        let req = self.req(x);
        self.push(
            Tensor::from_vec(vec![rows.len(), d], data).unwrap(),
            Op::SelectRows { x, rows: rows.to_vec() },
            req,
        )
    }

    /// Weighted mean token-level cross entropy: logits [n, v], one target per row.
    ///
    /// Rows with weight 0 contribute nothing; the result is normalized by the
    /// total weight.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[f64]) -> Var {
        let (n, v) = rows_cols(self.val(logits).shape());
        assert_eq!(targets.len(), n, "cross_entropy: target count mismatch");
        assert_eq!(weights.len(), n, "cross_entropy: weight count mismatch");
        let total_weight: f64 = weights.iter().sum();
        assert!(total_weight > 0.0, "cross_entropy: zero total weight");
        let src = self.val(logits).data();
        let mut loss = 0.0;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let row = &src[i * v..(i + 1) * v];
            let t = targets[i] as usize;
            assert!(t < v, "cross_entropy: target {t} out of range {v}");
            loss += weights[i] * (kernels::logsumexp(row) - row[t]);
        }
        loss /= total_weight;
        let req = self.req(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                total_weight,
            },
            req,
        )
    }

    /// Reverse pass from a scalar loss. Consumes the tape (the tape is cleared).
    ///
    /// Returns gradients for every `requires_grad` leaf; leaves the loss does
    /// not depend on get exact zero gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if let Some((idx, name)) = self.nonfinite {
            return Err(Error::Numeric(format!(
                "non-finite value produced by operation '{name}' (node {idx})"
            )));
        }
        if !self.val(loss).is_scalar() {
            return Err(Error::Numeric("backward requires scalar".into()));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires {
                continue;
            }
            let gy = grads[i].take().unwrap();
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::Add(a, b) => {
                    if self.req(*a) {
                        acc(&mut grads[a.0], &gy, self.val(*a).numel());
                    }
                    if self.req(*b) {
                        acc(&mut grads[b.0], &gy, self.val(*b).numel());
                    }
                }
                Op::AddRow(x, b) => {
                    let (n, d) = rows_cols(self.val(*x).shape());
                    if self.req(*x) {
                        acc(&mut grads[x.0], &gy, n * d);
                    }
                    if self.req(*b) {
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; d]);
                        for r in 0..n {
                            for j in 0..d {
                                g[j] += gy[r * d + j];
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.req(*a) {
                        acc(&mut grads[a.0], &gy, self.val(*a).numel());
                    }
                    if self.req(*b) {
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; self.val(*b).numel()]);
                        for (gi, &u) in g.iter_mut().zip(&gy) {
                            *gi -= u;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.req(*a) {
                        let bv = self.val(*b).data();
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; bv.len()]);
                        for j in 0..bv.len() {
                            g[j] += gy[j] * bv[j];
                        }
                    }
                    if self.req(*b) {
                        let av = self.val(*a).data();
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; av.len()]);
                        for j in 0..av.len() {
                            g[j] += gy[j] * av[j];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.req(*a) {
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; gy.len()]);
                        for (gi, &u) in g.iter_mut().zip(&gy) {
                            *gi += c * u;
                        }
                    }
                }
                Op::Square(a) => {
                    if self.req(*a) {
                        let av = self.val(*a).data();
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; av.len()]);
                        for j in 0..av.len() {
                            g[j] += 2.0 * av[j] * gy[j];
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.req(*a) {
                        let numel = self.val(*a).numel();
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; numel]);
                        for gi in g.iter_mut() {
                            *gi += gy[0];
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (n, k) = rows_cols(self.val(*a).shape());
                    let m = rows_cols(self.val(*b).shape()).1;
                    if self.req(*a) {
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; n * k]);
                        kernels::matmul_nt_acc(&gy, self.val(*b).data(), g, n, m, k);
                    }
                    if self.req(*b) {
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; k * m]);
                        kernels::matmul_tn_acc(self.val(*a).data(), &gy, g, n, k, m);
                    }
                }
                Op::MatmulNt(a, b) => {
                    let (n, k) = rows_cols(self.val(*a).shape());
                    let m = rows_cols(self.val(*b).shape()).0;
                    if self.req(*a) {
                        // dA = dC (n x m) * B (m x k)
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; n * k]);
                        kernels::matmul_nn_acc(&gy, self.val(*b).data(), g, n, m, k);
                    }
                    if self.req(*b) {
                        // dB = dC^T (m x n) * A (n x k)
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; m * k]);
                        kernels::matmul_tn_acc(&gy, self.val(*a).data(), g, n, m, k);
                    }
                }
                Op::BatchedNt(a, b) => {
                    let (lead, n, k) = batched_dims(self.val(*a).shape());
                    let m = batched_dims(self.val(*b).shape()).1;
                    let batches: usize = lead.iter().product();
                    if self.req(*a) {
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; batches * n * k]);
                        for t in 0..batches {
                            kernels::matmul_nn_acc(
                                &gy[t * n * m..(t + 1) * n * m],
                                &self.val(*b).data()[t * m * k..(t + 1) * m * k],
                                &mut g[t * n * k..(t + 1) * n * k],
                                n,
                                m,
                                k,
                            );
                        }
                    }
                    if self.req(*b) {
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; batches * m * k]);
                        for t in 0..batches {
                            kernels::matmul_tn_acc(
                                &gy[t * n * m..(t + 1) * n * m],
                                &self.val(*a).data()[t * n * k..(t + 1) * n * k],
                                &mut g[t * m * k..(t + 1) * m * k],
                                n,
                                m,
                                k,
                            );
                        }
                    }
                }
                Op::BatchedNn(a, b) => {
                    let (lead, n, k) = batched_dims(self.val(*a).shape());
                    let m = batched_dims(self.val(*b).shape()).2;
                    let batches: usize = lead.iter().product();
                    if self.req(*a) {
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; batches * n * k]);
                        for t in 0..batches {
                            kernels::matmul_nt_acc(
                                &gy[t * n * m..(t + 1) * n * m],
                                &self.val(*b).data()[t * k * m..(t + 1) * k * m],
                                &mut g[t * n * k..(t + 1) * n * k],
                                n,
                                m,
                                k,
                            );
                        }
                    }
                    if self.req(*b) {
                        let g = grads[b.0].get_or_insert_with(|| vec![0.0; batches * k * m]);
                        for t in 0..batches {
                            kernels::matmul_tn_acc(
                                &self.val(*a).data()[t * n * k..(t + 1) * n * k],
                                &gy[t * n * m..(t + 1) * n * m],
                                &mut g[t * k * m..(t + 1) * k * m],
                                n,
                                k,
                                m,
                            );
                        }
                    }
                }
                Op::SplitHeads { x, batch, heads } => {
                    if self.req(*x) {
                        let (n, d) = rows_cols(self.val(*x).shape());
                        let len = n / batch;
                        let dh = d / heads;
                        let g = grads[x.0].get_or_insert_with(|| vec![0.0; n * d]);
                        for b in 0..*batch {
                            for h in 0..*heads {
                                for l in 0..len {
                                    let s = ((b * heads + h) * len + l) * dh;
                                    let dst = (b * len + l) * d + h * dh;
                                    for j in 0..dh {
                                        g[dst + j] += gy[s + j];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MergeHeads { x } => {
                    if self.req(*x) {
                        let shape = self.val(*x).shape();
                        let (batch, heads, len, dh) = (shape[0], shape[1], shape[2], shape[3]);
                        let d = heads * dh;
                        let g = grads[x.0].get_or_insert_with(|| vec![0.0; batch * len * d]);
                        for b in 0..batch {
                            for h in 0..heads {
                                for l in 0..len {
                                    let s = ((b * heads + h) * len + l) * dh;
                                    let src = (b * len + l) * d + h * dh;
                                    for j in 0..dh {
                                        g[s + j] += gy[src + j];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    if self.req(*a) {
                        let av = self.val(*a).data();
                        let g = grads[a.0].get_or_insert_with(|| vec![0.0; av.len()]);
                        for j in 0..av.len() {
                            g[j] += kernels::gelu_grad(av[j]) * gy[j];
                        }
                    }
                }
                Op::SoftmaxMasked { x } => {
                    if self.req(*x) {
                        let y = node.value.data();
                        let shape = node.value.shape();
                        let lk = shape[3];
                        let rows = y.len() / lk;
                        let g = grads[x.0].get_or_insert_with(|| vec![0.0; y.len()]);
                        for r in 0..rows {
                            let off = r * lk;
                            let yrow = &y[off..off + lk];
                            let gyr = &gy[off..off + lk];
                            let dot: f64 = yrow.iter().zip(gyr).map(|(a, b)| a * b).sum();
                            for j in 0..lk {
                                g[off + j] += yrow[j] * (gyr[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let (n, d) = rows_cols(self.val(*x).shape());
                    let xv = self.val(*x).data();
                    let gv = self.val(*gain).data();
                    if self.req(*gain) {
                        let g = grads[gain.0].get_or_insert_with(|| vec![0.0; d]);
                        for r in 0..n {
                            let (mean, istd) = stats[r];
                            for j in 0..d {
                                let xhat = (xv[r * d + j] - mean) * istd;
                                g[j] += gy[r * d + j] * xhat;
                            }
                        }
                    }
                    if self.req(*bias) {
                        let g = grads[bias.0].get_or_insert_with(|| vec![0.0; d]);
                        for r in 0..n {
                            for j in 0..d {
                                g[j] += gy[r * d + j];
                            }
                        }
                    }
                    if self.req(*x) {
                        let g = grads[x.0].get_or_insert_with(|| vec![0.0; n * d]);
                        for r in 0..n {
                            let (mean, istd) = stats[r];
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for j in 0..d {
                                let xhat = (xv[r * d + j] - mean) * istd;
                                let dxhat = gy[r * d + j] * gv[j];
                                mean_dxhat += dxhat;
                                mean_dxhat_xhat += dxhat * xhat;
                            }
                            mean_dxhat /= d as f64;
                            mean_dxhat_xhat /= d as f64;
                            for j in 0..d {
                                let xhat = (xv[r * d + j] - mean) * istd;
                                let dxhat = gy[r * d + j] * gv[j];
                                g[r * d + j] +=
                                    istd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                            }
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if self.req(*table) {
                        let (v, d) = rows_cols(self.val(*table).shape());
                        let g = grads[table.0].get_or_insert_with(|| vec![0.0; v * d]);
                        for (i, &id) in ids.iter().enumerate() {
                            let dst = id as usize * d;
                            for j in 0..d {
                                g[dst + j] += gy[i * d + j];
                            }
                        }
                    }
                }
                Op::SelectRows { x, rows } => {
                    if self.req(*x) {
                        let (n, d) = rows_cols(self.val(*x).shape());
                        let g = grads[x.0].get_or_insert_with(|| vec![0.0; n * d]);
                        for (i, &r) in rows.iter().enumerate() {
                            for j in 0..d {
                                g[r * d + j] += gy[i * d + j];
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, weights, total_weight } => {
                    if self.req(*logits) {
                        let (n, v) = rows_cols(self.val(*logits).shape());
                        let zv = self.val(*logits).data();
                        let g = grads[logits.0].get_or_insert_with(|| vec![0.0; n * v]);
                        let scale = gy[0] / total_weight;
                        let mut probs = vec![0.0; v];
                        for r in 0..n {
                            if weights[r] == 0.0 {
                                continue;
                            }
                            probs.copy_from_slice(&zv[r * v..(r + 1) * v]);
                            kernels::softmax_row(&mut probs);
                            let w = weights[r] * scale;
                            let grow = &mut g[r * v..(r + 1) * v];
                            for j in 0..v {
                                grow[j] += w * probs[j];
                            }
                            grow[targets[r] as usize] -= w;
                        }
                    }
                }
            }
        }

        // Materialize exact zeros for parameters the loss does not touch.
        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(n_nodes);
        for (i, node) in self.nodes.iter().enumerate() {
            let take = matches!(node.op, Op::Leaf) && node.value.requires_grad();
            if take {
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                out.push(Some(Tensor::from_vec(node.value.shape().to_vec(), data).unwrap()));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    assert!(shape.len() >= 2, "expected at least 2-d shape, got {shape:?}");
    let cols = shape[shape.len() - 1];
    let rows: usize = shape[..shape.len() - 1].iter().product();
    (rows, cols)
}

fn batched_dims(shape: &[usize]) -> (Vec<usize>, usize, usize) {
    assert!(shape.len() >= 2, "expected at least 2-d shape, got {shape:?}");
    let n = shape[shape.len() - 2];
    let k = shape[shape.len() - 1];
    (shape[..shape.len() - 2].to_vec(), n, k)
}

fn acc(slot: &mut Option<Vec<f64>>, gy: &[f64], numel: usize) {
    let g = slot.get_or_insert_with(|| vec![0.0; numel]);
    for (gi, &u) in g.iter_mut().zip(gy) {
        *gi += u;
    }
}
