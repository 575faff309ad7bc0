use rand::{Rng, RngCore};

use super::kernels::{self, gemm};
use super::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::error::{DamsError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which keys each query may attend to, for a batch of `batch` sequences
/// laid out as `batch * q_len` query rows and `batch * k_len` key rows.
#[derive(Clone, Debug)]
pub struct AttentionMask {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    /// `batch * k_len` flags; false keys receive probability exactly zero.
    pub key_valid: Vec<bool>,
    /// Query `i` may only see keys `j <= i`. Requires `q_len == k_len`.
    pub causal: bool,
}

impl AttentionMask {
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_valid[b * self.k_len + j] && (!self.causal || j <= i)
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<Real>, rstd: Vec<Real> },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, index: Vec<Option<usize>> },
    Attention { q: Var, k: Var, v: Var, heads: usize, mask: AttentionMask, probs: Vec<Real> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<Real>, probs: Vec<Real> },
    BceWithLogits { logits: Var, labels: Vec<Real> },
    GradReverse(Var),
    Dropout { x: Var, mask: Vec<Real> },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

struct DropoutCtx<'a> {
    rate: Real,
    rng: &'a mut dyn RngCore,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    dropout: Option<DropoutCtx<'a>>,
}

impl<'a> Tape<'a> {
    /// Inference tape: dropout is the identity.
    pub fn new(params: &'a ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Training tape with inverted dropout at `rate` drawn from `rng`.
    pub fn training(params: &'a ParamStore, rate: Real, rng: &'a mut dyn RngCore) -> Self {
        let mut tape = Tape::new(params);
        if rate > 0.0 {
            tape.dropout = Some(DropoutCtx { rate, rng });
        }
        tape
    }

    /// Draw dropout masks from `rng` from now on; no-op on inference tapes.
    pub fn set_dropout_rng(&mut self, rng: &'a mut dyn RngCore) {
        if let Some(ctx) = self.dropout.as_mut() {
            ctx.rng = rng;
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn value(&self, v: Var) -> &[Real] {
        self.tensor(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.tensor(v).shape()
    }

    pub fn scalar(&self, v: Var) -> Real {
        self.tensor(v).item()
    }

    /// A constant input. It has no parameter behind it and receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A parameter of the store. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `a · b` for 2-D operands; with `trans_b`, `b` is stored as `n×k`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs matrices, got {sa:?} and {sb:?}");
        let (m, k) = (sa[0], sa[1]);
        let n = if trans_b {
            assert_eq!(sb[1], k, "matmul inner dims");
            sb[0]
        } else {
            assert_eq!(sb[0], k, "matmul inner dims");
            sb[1]
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), trans_b, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b, trans_b }, needs)
    }

    /// `x · w + b` over the last dimension of `x`; `w` is `in × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        let (din, dout) = (ws[0], ws[1]);
        assert_eq!(*xs.last().unwrap(), din, "linear input dim");
        let rows = self.tensor(x).len() / din;
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bias = self.value(b);
            assert_eq!(bias.len(), dout);
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bias);
            }
        }
        gemm(rows, din, dout, self.value(x), false, self.value(w), false, &mut out, b.is_some());
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out: Vec<Real> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor { shape, data: out }, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let out: Vec<Real> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor { shape, data: out }, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let out: Vec<Real> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor { shape, data: out }, Op::Scale(a, c), needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<Real> = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor { shape, data: out }, Op::Gelu(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<Real> = self.value(a).iter().map(|&x| kernels::sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor { shape, data: out }, Op::Sigmoid(a), needs)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.tensor(a);
        if !t.all_finite() {
            return Err(DamsError::NumericDomain("softmax input is not finite".into()));
        }
        let cols = t.cols();
        if cols == 0 {
            return Err(DamsError::NumericDomain("softmax of an empty row".into()));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            kernels::softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax(a), needs))
    }

    /// Layer normalisation over the last dimension with gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: Real = 1e-5;
        let t = self.tensor(x);
        let d = t.cols();
        let rows = t.rows();
        let (g, b) = (self.value(gain), self.value(bias));
        assert_eq!(g.len(), d);
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Tensor { shape, data: out },
            Op::LayerNorm { x, gain, bias, xhat, rstd },
            needs,
        )
    }

    /// Rows of `table` selected by `ids`, shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.tensor(table);
        let (v, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(DamsError::Usage(format!("token id {id} outside vocabulary of {v}")));
            }
            out.extend_from_slice(t.row(id));
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor { shape: vec![ids.len(), d], data: out },
            Op::Embedding { table, ids: ids.to_vec() },
            needs,
        ))
    }

    /// Row gather from a matrix; `None` yields a zero row. Output `[index.len(), d]`.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>]) -> Var {
        let t = self.tensor(x);
        let d = t.cols();
        let mut out = vec![0.0; index.len() * d];
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = *src {
                out[r * d..(r + 1) * d].copy_from_slice(t.row(s));
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor { shape: vec![index.len(), d], data: out },
            Op::GatherRows { x, index: index.to_vec() },
            needs,
        )
    }

    /// Scaled dot-product multi-head attention over already-projected
    /// `q` (`batch*q_len × d`), `k` and `v` (`batch*k_len × d`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: AttentionMask) -> Var {
        let d = self.tensor(q).cols();
        assert_eq!(d % heads, 0);
        assert!(!mask.causal || mask.q_len == mask.k_len);
        let (bsz, tq, tk) = (mask.batch, mask.q_len, mask.k_len);
        assert_eq!(self.tensor(q).rows(), bsz * tq);
        assert_eq!(self.tensor(k).rows(), bsz * tk);
        assert_eq!(mask.key_valid.len(), bsz * tk);
        let dh = d / heads;
        let scale = 1.0 / (dh as Real).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; bsz * heads * tq * tk];
        let mut out = vec![0.0; bsz * tq * d];
        let mut scores = vec![0.0; tk];
        for b in 0..bsz {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let qrow = &qv[(b * tq + i) * d + off..(b * tq + i) * d + off + dh];
                    for j in 0..tk {
                        scores[j] = if mask.allowed(b, i, j) {
                            let krow = &kv[(b * tk + j) * d + off..(b * tk + j) * d + off + dh];
                            dot(qrow, krow) * scale
                        } else {
                            Real::NEG_INFINITY
                        };
                    }
                    kernels::softmax_in_place(&mut scores);
                    let p_off = ((b * heads + h) * tq + i) * tk;
                    probs[p_off..p_off + tk].copy_from_slice(&scores);
                    let orow = &mut out[(b * tq + i) * d + off..(b * tq + i) * d + off + dh];
                    for j in 0..tk {
                        let p = scores[j];
                        if p != 0.0 {
                            let vrow = &vv[(b * tk + j) * d + off..(b * tk + j) * d + off + dh];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += p * x;
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            Tensor { shape: vec![bsz * tq, d], data: out },
            Op::Attention { q, k, v, heads, mask, probs },
            needs,
        )
    }

    /// Weighted negative log-likelihood: `sum_r weights[r] * -log softmax(logits[r])[targets[r]]`.
    /// Rows with zero weight are ignored entirely (their targets are not checked).
    pub fn weighted_nll(&mut self, logits: Var, targets: &[usize], weights: &[Real]) -> Result<Var> {
        let t = self.tensor(logits);
        let (rows, v) = (t.rows(), t.cols());
        if targets.len() != rows || weights.len() != rows {
            return Err(DamsError::Usage(format!(
                "{rows} logit rows but {} targets / {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(DamsError::InvalidBatch("every position is padded".into()));
        }
        let mut probs = vec![0.0; rows * v];
        let mut loss = 0.0;
        for r in 0..rows {
            if weights[r] == 0.0 {
                continue;
            }
            if targets[r] >= v {
                return Err(DamsError::Usage(format!("target id {} outside vocabulary of {v}", targets[r])));
            }
            let row = t.row(r);
            let lse = kernels::log_sum_exp(row);
            loss += weights[r] * (lse - row[targets[r]]);
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
        }
        if !loss.is_finite() {
            return Err(DamsError::NumericDomain("cross entropy is not finite".into()));
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            needs,
        ))
    }

    /// Mean cross entropy over the positions where `pad_mask` is false.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_mask: &[bool]) -> Result<Var> {
        let real = pad_mask.iter().filter(|p| !**p).count();
        if real == 0 {
            return Err(DamsError::InvalidBatch("every position is padded".into()));
        }
        let w = 1.0 / real as Real;
        let weights: Vec<Real> = pad_mask.iter().map(|&p| if p { 0.0 } else { w }).collect();
        self.weighted_nll(logits, targets, &weights)
    }

    /// Mean binary logistic loss of logits against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[Real]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() || z.is_empty() {
            return Err(DamsError::InvalidBatch(format!(
                "{} logits for {} labels",
                z.len(),
                labels.len()
            )));
        }
        let n = z.len() as Real;
        let loss: Real = z.iter().zip(labels).map(|(&z, &y)| kernels::softplus(z) - y * z).sum::<Real>() / n;
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, labels: labels.to_vec() }, needs))
    }

    /// Identity forward, negated gradient backward.
    pub fn grad_reverse(&mut self, a: Var) -> Var {
        let t = self.tensor(a).clone();
        let needs = self.needs(a);
        self.push(t, Op::GradReverse(a), needs)
    }

    /// Inverted dropout; identity on inference tapes.
    pub fn dropout(&mut self, a: Var) -> Var {
        let Some(ctx) = self.dropout.as_mut() else { return a };
        let rate = ctx.rate;
        let keep = 1.0 / (1.0 - rate);
        let n = match &self.nodes[a.0].value {
            Value::Owned(t) => t.len(),
            Value::Param(id) => self.params.get(*id).len(),
        };
        let mask: Vec<Real> = (0..n)
            .map(|_| if ctx.rng.random::<f64>() < rate as f64 { 0.0 } else { keep })
            .collect();
        let t = self.tensor(a);
        let out: Vec<Real> = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor { shape, data: out }, Op::Dropout { x: a, mask }, needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: Real = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let vals = self.value(a);
        let s: Real = vals.iter().sum::<Real>() / vals.len() as Real;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.tensor(a).clone().reshape(shape.to_vec()).expect("reshape size");
        let needs = self.needs(a);
        self.push(t, Op::Reshape(a), needs)
    }

    /// Gradients of the scalar `loss` with respect to every parameter it reaches.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(DamsError::Usage("loss is not a node of this tape".into()));
        }
        if self.tensor(loss).len() != 1 {
            return Err(DamsError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads = Gradients::empty(self.params.len());
        let mut adj: Vec<Option<Vec<Real>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(&node.op, &g, &mut adj, &mut grads);
        }
        Ok(grads)
    }

    fn slot<'g>(&self, adj: &'g mut [Option<Vec<Real>>], v: Var) -> Option<&'g mut Vec<Real>> {
        if !self.needs(v) {
            return None;
        }
        let n = self.tensor(v).len();
        Some(adj[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_node(&self, op: &Op, g: &[Real], adj: &mut [Option<Vec<Real>>], grads: &mut Gradients) {
        match op {
            Op::Leaf => {}
            Op::Param(id) => grads.accumulate(*id, g),
            Op::MatMul { a, b, trans_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = (sa[0], sa[1]);
                let n = if *trans_b { sb[0] } else { sb[1] };
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(adj, *a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, g, false, bv, !*trans_b, ga, true);
                }
                if let Some(gb) = self.slot(adj, *b) {
                    if *trans_b {
                        gemm(n, m, k, g, true, av, false, gb, true);
                    } else {
                        gemm(k, m, n, av, true, g, false, gb, true);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                let rows = g.len() / dout;
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(gx) = self.slot(adj, *x) {
                    gemm(rows, dout, din, g, false, wv, true, gx, true);
                }
                if let Some(gw) = self.slot(adj, *w) {
                    gemm(din, rows, dout, xv, true, g, false, gw, true);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(adj, *b) {
                        for row in g.chunks(dout) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(adj, v) {
                        axpy(s, 1.0, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(adj, *a) {
                    for ((acc, gi), bi) in s.iter_mut().zip(g).zip(bv) {
                        *acc += gi * bi;
                    }
                }
                if let Some(s) = self.slot(adj, *b) {
                    for ((acc, gi), ai) in s.iter_mut().zip(g).zip(av) {
                        *acc += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(adj, *a) {
                    axpy(s, *c, g);
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                if let Some(s) = self.slot(adj, *a) {
                    for ((acc, gi), x) in s.iter_mut().zip(g).zip(av) {
                        *acc += gi * kernels::gelu_grad(*x);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let av = self.value(*a);
                if let Some(s) = self.slot(adj, *a) {
                    for ((acc, gi), x) in s.iter_mut().zip(g).zip(av) {
                        let y = kernels::sigmoid(*x);
                        *acc += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a) => {
                // recompute the output from the input row
                let t = self.tensor(*a);
                let cols = t.cols();
                let mut y = t.data().to_vec();
                for row in y.chunks_mut(cols) {
                    kernels::softmax_in_place(row);
                }
                if let Some(s) = self.slot(adj, *a) {
                    for ((yr, gr), sr) in y.chunks(cols).zip(g.chunks(cols)).zip(s.chunks_mut(cols)) {
                        let dotp = dot(yr, gr);
                        for c in 0..cols {
                            sr[c] += yr[c] * (gr[c] - dotp);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).len();
                let gv = self.value(*gain);
                if let Some(s) = self.slot(adj, *gain) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            s[c] += gr[c] * hr[c];
                        }
                    }
                }
                if let Some(s) = self.slot(adj, *bias) {
                    for gr in g.chunks(d) {
                        axpy(s, 1.0, gr);
                    }
                }
                if let Some(s) = self.slot(adj, *x) {
                    let mut dh = vec![0.0; d];
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for c in 0..d {
                            dh[c] = gr[c] * gv[c];
                        }
                        let mean_dh = dh.iter().sum::<Real>() / d as Real;
                        let mean_dhh = dot(&dh, hr) / d as Real;
                        let sr = &mut s[r * d..(r + 1) * d];
                        for c in 0..d {
                            sr[c] += rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dhh);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.tensor(*table).cols();
                if let Some(s) = self.slot(adj, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut s[id * d..(id + 1) * d], 1.0, &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let d = self.tensor(*x).cols();
                if let Some(s) = self.slot(adj, *x) {
                    for (r, src) in index.iter().enumerate() {
                        if let Some(src) = *src {
                            axpy(&mut s[src * d..(src + 1) * d], 1.0, &g[r * d..(r + 1) * d]);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, mask, probs } => {
                self.attention_backward(*q, *k, *v, *heads, mask, probs, g, adj);
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let v = self.tensor(*logits).cols();
                let g0 = g[0];
                if let Some(s) = self.slot(adj, *logits) {
                    for (r, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let sr = &mut s[r * v..(r + 1) * v];
                        let pr = &probs[r * v..(r + 1) * v];
                        let scale = g0 * w;
                        for c in 0..v {
                            sr[c] += scale * pr[c];
                        }
                        sr[targets[r]] -= scale;
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                let z = self.value(*logits);
                let n = z.len() as Real;
                if let Some(s) = self.slot(adj, *logits) {
                    for ((acc, zi), y) in s.iter_mut().zip(z).zip(labels) {
                        *acc += g[0] * (kernels::sigmoid(*zi) - y) / n;
                    }
                }
            }
            Op::GradReverse(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    axpy(s, -1.0, g);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(s) = self.slot(adj, *x) {
                    for ((acc, gi), m) in s.iter_mut().zip(g).zip(mask) {
                        *acc += gi * m;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    for acc in s.iter_mut() {
                        *acc += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    let c = g[0] / s.len() as Real;
                    for acc in s.iter_mut() {
                        *acc += c;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    axpy(s, 1.0, g);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &AttentionMask,
        probs: &[Real],
        g: &[Real],
        adj: &mut [Option<Vec<Real>>],
    ) {
        let d = self.tensor(q).cols();
        let dh = d / heads;
        let scale = 1.0 / (dh as Real).sqrt();
        let (bsz, tq, tk) = (mask.batch, mask.q_len, mask.k_len);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut gq = vec![0.0; qv.len()];
        let mut gk = vec![0.0; kv.len()];
        let mut gv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; tk];
        for b in 0..bsz {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let p_off = ((b * heads + h) * tq + i) * tk;
                    let p = &probs[p_off..p_off + tk];
                    let qi = (b * tq + i) * d + off;
                    let go = &g[qi..qi + dh];
                    let mut sum_pdp = 0.0;
                    for j in 0..tk {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let kj = (b * tk + j) * d + off;
                        dp[j] = dot(go, &vv[kj..kj + dh]);
                        sum_pdp += p[j] * dp[j];
                        axpy(&mut gv[kj..kj + dh], p[j], go);
                    }
                    for j in 0..tk {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - sum_pdp) * scale;
                        let kj = (b * tk + j) * d + off;
                        axpy(&mut gq[qi..qi + dh], ds, &kv[kj..kj + dh]);
                        axpy(&mut gk[kj..kj + dh], ds, &qv[qi..qi + dh]);
                    }
                }
            }
        }
        for (var, contrib) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(s) = self.slot(adj, var) {
                axpy(s, 1.0, &contrib);
            }
        }
    }
}

#[inline]
fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [Real], alpha: Real, x: &[Real]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
