//! Reverse-mode gradient tape.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order; `backward` walks it once in reverse. Forward values are
//! never touched after creation.

use std::collections::HashMap;
use std::sync::Arc;

use super::attention::{self, AttentionPattern};
use super::tensor::{log_sum_exp, matmul_at_into, matmul_bt_into, matmul_into, moments, softmax_in_place};
use super::{axpy, gelu_grad_scalar, gelu_scalar, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Matmul(NodeId, NodeId),
    MatmulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    MulMask(NodeId, Vec<T>),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    GatherRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    Softmax(NodeId),
    RowNormalize {
        x: NodeId,
        norms: Vec<T>,
        eps: T,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        pattern: Arc<AttentionPattern>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
    attention_pairs: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            attention_pairs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Total (query, key) score evaluations made by attention ops on this tape.
    pub fn attention_pairs(&self) -> u64 {
        self.attention_pairs
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        debug_assert!(value.is_finite() || inputs.iter().any(|i| !self.value(*i).is_finite()));
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param => true,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, &[])
    }

    /// Bind a parameter; repeated binds of the same id share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param, &[]);
        self.params.insert(id, n);
        n
    }

    fn dims2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        match self.shape(id) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension {
                op,
                left: s.to_vec(),
                right: vec![],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(value, Op::MatmulBt(a, b), &[a, b]))
    }

    /// `x · Wᵀ + b` with `W: [out × in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let y = self.matmul_bt(x, weight)?;
        self.add_row(y, bias)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector of length `cols` to every row.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let c = self.value(x).cols();
        if self.value(bias).numel() != c {
            return Err(self.mismatch("add_row", x, bias));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in value.data_mut().chunks_exact_mut(c) {
            for (v, &bj) in row.iter_mut().zip(&b) {
                *v += bj;
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::Dimension {
                op: "mul_mask",
                left: self.shape(x).to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        Ok(self.push(value, Op::MulMask(x, mask), &[x]))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(gelu_scalar);
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        let xv = self.value(x);
        let c = xv.cols();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xv.clone();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstds = Vec::with_capacity(xv.rows());
        for (r, row) in out.data_mut().chunks_exact_mut(c).enumerate() {
            let (mean, rstd) = moments(row, eps);
            rstds.push(rstd);
            for j in 0..c {
                let xh = (row[j] - mean) * rstd;
                xhat[r * c + j] = xh;
                row[j] = xh * g[j] + b[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd: rstds,
            },
            &[x, gamma, beta],
        ))
    }

    /// Row gather from a `[V × d]` table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2("embedding", table)?;
        if ids.is_empty() {
            return Err(Error::contract("embedding lookup with no ids"));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, d) = self.dims2("gather_rows", x)?;
        if rows.is_empty() {
            return Err(Error::contract("gather of zero rows"));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            if i >= r {
                return Err(Error::Index {
                    what: "row",
                    index: i,
                    bound: r,
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(value, Op::GatherRows { x, rows: rows.to_vec() }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of zero parts"))?;
        let (_, d) = self.dims2("concat_rows", first)?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != d {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, d], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if width == 0 || start + width > c {
            return Err(Error::Index {
                what: "column",
                index: start + width,
                bound: c,
            });
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + width]);
        }
        let value = Tensor::new(vec![r, width], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of zero parts"))?;
        let (r, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2("concat_cols", p)?;
            if pr != r {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![r, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).softmax_lastdim();
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Each row divided by `max(‖row‖, eps)`.
    pub fn row_normalize(&mut self, x: NodeId, eps: T) -> NodeId {
        let mut value = self.value(x).clone();
        let c = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_exact_mut(c) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(n);
            let inv = n.max(eps).recip();
            row.iter_mut().for_each(|v| *v *= inv);
        }
        self.push(value, Op::RowNormalize { x, norms, eps }, &[x])
    }

    /// Mean over rows of `-log softmax(logits)[target]`; scalar output.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (n, c) = self.dims2("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![n, c],
                right: vec![targets.len()],
            });
        }
        let lv = self.value(logits);
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Index {
                    what: "class",
                    index: t,
                    bound: c,
                });
            }
            let row = lv.row(r);
            total += log_sum_exp(row) - row[t];
            softmax_in_place(&mut probs[r * c..(r + 1) * c]);
        }
        let value = Tensor::scalar(total / T::of(n as f64));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Multi-head attention restricted to `pattern`. Inputs are `[len × d]`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        pattern: Arc<AttentionPattern>,
    ) -> Result<NodeId> {
        let (len, d) = self.dims2("attention", q)?;
        if self.shape(k) != [len, d] || self.shape(v) != [len, d] {
            return Err(self.mismatch("attention", q, k));
        }
        if pattern.len() != len {
            return Err(Error::Dimension {
                op: "attention",
                left: vec![len, d],
                right: vec![pattern.len()],
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("{d} not divisible into {heads} heads")));
        }
        let (out, probs) =
            attention::forward(&pattern, heads, d, self.value(q).data(), self.value(k).data(), self.value(v).data());
        self.attention_pairs += (pattern.pair_count() * heads) as u64;
        let value = Tensor::new(vec![len, d], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                pattern,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Gradients of the scalar `loss` w.r.t. every parameter and leaf node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    if self.needs(*a) {
                        matmul_bt_into(&g, self.value(*b).data(), self.slot(&mut grads, *a), m, n, k);
                    }
                    if self.needs(*b) {
                        matmul_at_into(self.value(*a).data(), &g, self.slot(&mut grads, *b), m, k, n);
                    }
                }
                Op::MatmulBt(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[0];
                    if self.needs(*a) {
                        matmul_into(&g, self.value(*b).data(), self.slot(&mut grads, *a), m, n, k);
                    }
                    if self.needs(*b) {
                        matmul_at_into(&g, self.value(*a).data(), self.slot(&mut grads, *b), m, n, k);
                    }
                }
                Op::Add(a, b) => {
                    for x in [*a, *b] {
                        if self.needs(x) {
                            axpy(T::one(), &g, self.slot(&mut grads, x));
                        }
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.needs(*x) {
                        axpy(T::one(), &g, self.slot(&mut grads, *x));
                    }
                    if self.needs(*bias) {
                        let c = self.value(*bias).numel();
                        let gb = self.slot(&mut grads, *bias);
                        for row in g.chunks_exact(c) {
                            axpy(T::one(), row, gb);
                        }
                    }
                }
                Op::Scale(x, s) => {
                    if self.needs(*x) {
                        axpy(*s, &g, self.slot(&mut grads, *x));
                    }
                }
                Op::MulMask(x, mask) => {
                    if self.needs(*x) {
                        let gx = self.slot(&mut grads, *x);
                        for ((gx, &gi), &m) in gx.iter_mut().zip(&g).zip(mask) {
                            *gx += gi * m;
                        }
                    }
                }
                Op::Gelu(x) => {
                    if self.needs(*x) {
                        let xv = self.value(*x).data();
                        let gx = self.slot(&mut grads, *x);
                        for ((gx, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                            *gx += gi * gelu_grad_scalar(xi);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let c = self.value(*gamma).numel();
                    if self.needs(*gamma) {
                        let gg = self.slot(&mut grads, *gamma);
                        for (row_g, row_x) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for j in 0..c {
                                gg[j] += row_g[j] * row_x[j];
                            }
                        }
                    }
                    if self.needs(*beta) {
                        let gb = self.slot(&mut grads, *beta);
                        for row_g in g.chunks_exact(c) {
                            axpy(T::one(), row_g, gb);
                        }
                    }
                    if self.needs(*x) {
                        let gamma_v = self.value(*gamma).data().to_vec();
                        let gx = self.slot(&mut grads, *x);
                        let n = T::of(c as f64);
                        let mut dxhat = vec![T::zero(); c];
                        for (r, (row_g, row_x)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for j in 0..c {
                                dxhat[j] = row_g[j] * gamma_v[j];
                                mean_d += dxhat[j];
                                mean_dx += dxhat[j] * row_x[j];
                            }
                            mean_d /= n;
                            mean_dx /= n;
                            let out = &mut gx[r * c..(r + 1) * c];
                            for j in 0..c {
                                out[j] += rstd[r] * (dxhat[j] - mean_d - row_x[j] * mean_dx);
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    if self.needs(*table) {
                        let d = self.value(*table).cols();
                        let gt = self.slot(&mut grads, *table);
                        for (r, &id) in ids.iter().enumerate() {
                            axpy(T::one(), &g[r * d..(r + 1) * d], &mut gt[id * d..(id + 1) * d]);
                        }
                    }
                }
                Op::GatherRows { x, rows } => {
                    if self.needs(*x) {
                        let d = self.value(*x).cols();
                        let gx = self.slot(&mut grads, *x);
                        for (r, &src) in rows.iter().enumerate() {
                            axpy(T::one(), &g[r * d..(r + 1) * d], &mut gx[src * d..(src + 1) * d]);
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        if self.needs(p) {
                            axpy(T::one(), &g[offset..offset + n], self.slot(&mut grads, p));
                        }
                        offset += n;
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs(*x) {
                        let w = node.value.cols();
                        let c = self.value(*x).cols();
                        let gx = self.slot(&mut grads, *x);
                        for (i, row) in g.chunks_exact(w).enumerate() {
                            axpy(T::one(), row, &mut gx[i * c + start..i * c + start + w]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let gp = self.slot(&mut grads, p);
                            for (i, row) in g.chunks_exact(total).enumerate() {
                                axpy(T::one(), &row[offset..offset + w], &mut gp[i * w..(i + 1) * w]);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Softmax(x) => {
                    if self.needs(*x) {
                        let y = node.value.data();
                        let c = node.value.cols();
                        let gx = self.slot(&mut grads, *x);
                        for r in 0..y.len() / c {
                            let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                            let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            for j in 0..c {
                                gx[r * c + j] += yr[j] * (gr[j] - s);
                            }
                        }
                    }
                }
                Op::RowNormalize { x, norms, eps } => {
                    if self.needs(*x) {
                        let y = node.value.data();
                        let c = node.value.cols();
                        let gx = self.slot(&mut grads, *x);
                        for (r, &n) in norms.iter().enumerate() {
                            let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                            let out = &mut gx[r * c..(r + 1) * c];
                            if n > *eps {
                                let proj: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                                let inv = n.recip();
                                for j in 0..c {
                                    out[j] += (gr[j] - yr[j] * proj) * inv;
                                }
                            } else {
                                axpy(eps.recip(), gr, out);
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    if self.needs(*logits) {
                        let c = self.value(*logits).cols();
                        let scale = g[0] / T::of(targets.len() as f64);
                        let gl = self.slot(&mut grads, *logits);
                        for (r, &t) in targets.iter().enumerate() {
                            for j in 0..c {
                                let onehot = if j == t { T::one() } else { T::zero() };
                                gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.needs(*x) {
                        let g0 = g[0];
                        self.slot(&mut grads, *x).iter_mut().for_each(|v| *v += g0);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    pattern,
                    probs,
                } => {
                    let d = self.value(*q).cols();
                    let ag = attention::backward(
                        pattern,
                        *heads,
                        d,
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        probs,
                        &g,
                    );
                    for (input, grad) in [(*q, ag.dq), (*k, ag.dk), (*v, ag.dv)] {
                        if self.needs(input) {
                            axpy(T::one(), &grad, self.slot(&mut grads, input));
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], id: NodeId) -> &'g mut Vec<T> {
        let n = self.nodes[id.0].value.numel();
        grads[id.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    /// Run `backward` and add the parameter gradients into `store`.
    pub fn backward_into(&self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?.accumulate_into(self, store);
        Ok(())
    }
}

/// Result of [`Tape::backward`]: gradients for parameter nodes.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for (&pid, &nid) in &tape.params {
            if let Some(g) = self.get(nid) {
                let p = store.get_mut(pid);
                axpy(T::one(), g, p.grad.data_mut());
            }
        }
    }
}
