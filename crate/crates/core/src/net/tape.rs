//! Minimal reverse-mode autodiff over [`DenseMatrix`] values.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! reverse topological order. Gradients accumulate additively wherever a node
//! fans out.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shape of a batched causal attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq_len: usize,
    pub heads: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    RmsNorm(NodeId),
    Softmax(NodeId),
    Embed {
        table: NodeId,
        ids: Vec<usize>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        shape: AttentionShape,
        probs: Vec<DenseMatrix>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: DenseMatrix,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Recording of primitive operations for a single forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("node {} is not on this tape", id.0)));
        }
        Ok(())
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// `a · b`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).scale(c);
        Ok(self.push(v, Op::Scale(a, c)))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = kernels::gelu(self.value(a));
        Ok(self.push(v, Op::Gelu(a)))
    }

    /// Row-wise RMS normalization (no learned gain).
    pub fn rms_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = kernels::rms_norm_rows(self.value(a));
        Ok(self.push(v, Op::RmsNorm(a)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = kernels::softmax_rows(self.value(a));
        Ok(self.push(v, Op::Softmax(a)))
    }

    /// Gathers rows of `table` (one output row per id).
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.check(table)?;
        let v = kernels::gather_rows(self.value(table), ids)?;
        Ok(self.push(
            v,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Multi-head causal softmax attention over `batch` stacked sequences.
    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        shape: AttentionShape,
    ) -> Result<NodeId> {
        for id in [q, k, v] {
            self.check(id)?;
        }
        let (out, probs) =
            kernels::causal_attention(self.value(q), self.value(k), self.value(v), shape)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
        ))
    }

    /// Mean token cross-entropy in nats over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        self.check(logits)?;
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::DimensionMismatch {
                op: "cross_entropy",
                lhs: lv.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let probs = kernels::softmax_rows(lv);
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= lv.cols() {
                    return Err(Error::InvalidArgument(format!(
                        "target {t} out of range for {} classes",
                        lv.cols()
                    )));
                }
                total -= kernels::log_softmax_at(lv.row(r), t);
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            DenseMatrix::from_raw(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Grads> {
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::from_raw(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d = DenseMatrix::from_raw(
                        x.rows(),
                        x.cols(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xi, &gi)| gi * kernels::gelu_grad(xi))
                            .collect(),
                    );
                    accumulate(&mut grads, *a, d)?;
                }
                Op::RmsNorm(a) => {
                    let d = kernels::rms_norm_backward(self.value(*a), &node.value, &g);
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Softmax(a) => {
                    let d = kernels::softmax_backward(&node.value, &g);
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Embed { table, ids } => {
                    let t = self.value(*table);
                    let mut d = DenseMatrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &gi) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                    accumulate(&mut grads, *table, d)?;
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    shape,
                    probs,
                } => {
                    let (dq, dk, dv) = kernels::causal_attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        probs,
                        &g,
                        *shape,
                    );
                    accumulate(&mut grads, *q, dq)?;
                    accumulate(&mut grads, *k, dk)?;
                    accumulate(&mut grads, *v, dv)?;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let upstream = g.get(0, 0);
                    let mut d = DenseMatrix::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let w = upstream / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                let row = d.row_mut(r);
                                row.copy_from_slice(probs.row(r));
                                row[t] -= 1.0;
                                row.iter_mut().for_each(|x| *x *= w);
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, d)?;
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], id: NodeId, g: DenseMatrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<DenseMatrix>>,
}

impl Grads {
    /// Gradient for `id`; `None` when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, id: NodeId, like: &DenseMatrix) -> DenseMatrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(like.rows(), like.cols()))
    }
}

/// Forward kernels shared by the tape and the tape-free reference path.
pub mod kernels {
    use super::AttentionShape;
    use crate::error::{Error, Result};
    use crate::matrix::DenseMatrix;

    pub const RMS_EPS: f64 = 1e-6;
    const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

    /// Tanh-approximated GELU.
    pub fn gelu(x: &DenseMatrix) -> DenseMatrix {
        x.map(gelu_scalar)
    }

    pub fn gelu_scalar(x: f64) -> f64 {
        0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
    }

    pub fn gelu_grad(x: f64) -> f64 {
        let inner = GELU_C * (x + 0.044715 * x * x * x);
        let t = inner.tanh();
        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    }

    pub fn rms_norm_rows(x: &DenseMatrix) -> DenseMatrix {
        let mut out = x.clone();
        let n = x.cols() as f64;
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            row.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    pub fn rms_norm_backward(x: &DenseMatrix, y: &DenseMatrix, g: &DenseMatrix) -> DenseMatrix {
        let n = x.cols() as f64;
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let ms = xr.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            let yr = y.row(r);
            let gr = g.row(r);
            let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
            for ((o, &gi), &yi) in out.row_mut(r).iter_mut().zip(gr).zip(yr) {
                *o = inv * (gi - yi * mean_gy);
            }
        }
        out
    }

    pub fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
        let mut out = x.clone();
        for r in 0..x.rows() {
            softmax_in_place(out.row_mut(r));
        }
        out
    }

    fn softmax_in_place(row: &mut [f64]) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }

    pub fn softmax_backward(y: &DenseMatrix, g: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(y.rows(), y.cols());
        for r in 0..y.rows() {
            let yr = y.row(r);
            let gr = g.row(r);
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((o, &yi), &gi) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                *o = yi * (gi - dot);
            }
        }
        out
    }

    /// `log softmax(row)[t]`
    pub fn log_softmax_at(row: &[f64], t: usize) -> f64 {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row[t] - lse
    }

    pub fn gather_rows(table: &DenseMatrix, ids: &[usize]) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(ids.len(), table.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= table.rows() {
                return Err(Error::InvalidArgument(format!(
                    "index {id} out of range for table with {} rows",
                    table.rows()
                )));
            }
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        Ok(out)
    }

    fn check_shape(x: &DenseMatrix, shape: AttentionShape) -> Result<usize> {
        if x.rows() != shape.batch * shape.seq_len || !x.cols().is_multiple_of(shape.heads) {
            return Err(Error::DimensionMismatch {
                op: "causal_attention",
                lhs: x.shape(),
                rhs: (shape.batch * shape.seq_len, shape.heads),
            });
        }
        Ok(x.cols() / shape.heads)
    }

    /// Returns the attention output and the per-(sequence, head) probability
    /// matrices (seq_len × seq_len, lower triangular), in `b * heads + h` order.
    pub fn causal_attention(
        q: &DenseMatrix,
        k: &DenseMatrix,
        v: &DenseMatrix,
        shape: AttentionShape,
    ) -> Result<(DenseMatrix, Vec<DenseMatrix>)> {
        let dh = check_shape(q, shape)?;
        for x in [k, v] {
            if x.shape() != q.shape() {
                return Err(Error::DimensionMismatch {
                    op: "causal_attention",
                    lhs: q.shape(),
                    rhs: x.shape(),
                });
            }
        }
        let t = shape.seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = DenseMatrix::zeros(q.rows(), q.cols());
        let mut probs = Vec::with_capacity(shape.batch * shape.heads);
        for b in 0..shape.batch {
            for h in 0..shape.heads {
                let c0 = h * dh;
                let mut p = DenseMatrix::zeros(t, t);
                for i in 0..t {
                    let qi = &q.row(b * t + i)[c0..c0 + dh];
                    let row = &mut p.row_mut(i)[..=i];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &k.row(b * t + j)[c0..c0 + dh];
                        *s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(row);
                    let orow = &mut out.row_mut(b * t + i)[c0..c0 + dh];
                    for (j, &pij) in row.iter().enumerate() {
                        let vj = &v.row(b * t + j)[c0..c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += pij * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok((out, probs))
    }

    pub fn causal_attention_backward(
        q: &DenseMatrix,
        k: &DenseMatrix,
        v: &DenseMatrix,
        probs: &[DenseMatrix],
        g: &DenseMatrix,
        shape: AttentionShape,
    ) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
        let dh = q.cols() / shape.heads;
        let t = shape.seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = DenseMatrix::zeros(q.rows(), q.cols());
        let mut dk = DenseMatrix::zeros(k.rows(), k.cols());
        let mut dv = DenseMatrix::zeros(v.rows(), v.cols());
        let mut dp = vec![0.0; t];
        for b in 0..shape.batch {
            for h in 0..shape.heads {
                let c0 = h * dh;
                let p = &probs[b * shape.heads + h];
                for i in 0..t {
                    let gi = &g.row(b * t + i)[c0..c0 + dh];
                    let prow = &p.row(i)[..=i];
                    // dP = dO · Vᵀ, dV += Pᵀ · dO
                    for j in 0..=i {
                        let vj = &v.row(b * t + j)[c0..c0 + dh];
                        dp[j] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let dvj = &mut dv.row_mut(b * t + j)[c0..c0 + dh];
                        for (o, &x) in dvj.iter_mut().zip(gi) {
                            *o += prow[j] * x;
                        }
                    }
                    let dot: f64 = prow.iter().zip(&dp[..=i]).map(|(a, b)| a * b).sum();
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &k.row(b * t + j)[c0..c0 + dh];
                        let dqi = &mut dq.row_mut(b * t + i)[c0..c0 + dh];
                        for (o, &x) in dqi.iter_mut().zip(kj) {
                            *o += ds * x;
                        }
                        let qi = &q.row(b * t + i)[c0..c0 + dh];
                        let dkj = &mut dk.row_mut(b * t + j)[c0..c0 + dh];
                        for (o, &x) in dkj.iter_mut().zip(qi) {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Central-difference check of d(loss)/d(leaf) for a tape-building closure.
    fn finite_diff_check(
        leaf_value: DenseMatrix,
        build: impl Fn(&mut Tape, NodeId) -> NodeId,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf(leaf_value.clone());
        let loss = build(&mut tape, x);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get_or_zeros(x, &leaf_value);
        let h = 1e-6;
        for i in 0..leaf_value.data().len() {
            let eval = |delta: f64| {
                let mut v = leaf_value.clone();
                v.data_mut()[i] += delta;
                let mut t = Tape::new();
                let x = t.leaf(v);
                let l = build(&mut t, x);
                t.value(l).get(0, 0)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= tol * (1.0 + numeric.abs()),
                "entry {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    fn sum_weighted(tape: &mut Tape, y: NodeId, seed: u64) -> NodeId {
        // loss = Σ y ⊙ R via two matmuls with a fixed random matrix.
        let (r, c) = tape.value(y).shape();
        let w = Rng::new(seed).gaussian_matrix(c, 1, 1.0);
        let wn = tape.leaf(w);
        let col = tape.matmul(y, wn).unwrap();
        let ones = tape.leaf(DenseMatrix::from_fn(1, r, |_, _| 1.0));
        tape.matmul(ones, col).unwrap()
    }

    #[test]
    fn gelu_rmsnorm_softmax_gradients() {
        let x = Rng::new(1).gaussian_matrix(3, 5, 1.0);
        finite_diff_check(x.clone(), |t, x| { let y = t.gelu(x).unwrap(); sum_weighted(t, y, 2) }, 1e-6);
        finite_diff_check(x.clone(), |t, x| { let y = t.rms_norm(x).unwrap(); sum_weighted(t, y, 3) }, 1e-6);
        finite_diff_check(x, |t, x| { let y = t.softmax(x).unwrap(); sum_weighted(t, y, 4) }, 1e-6);
    }

    #[test]
    fn matmul_and_scale_gradients() {
        let mut rng = Rng::new(5);
        let x = rng.gaussian_matrix(4, 3, 1.0);
        let w = rng.gaussian_matrix(5, 3, 1.0);
        finite_diff_check(
            x,
            move |t, x| {
                let wn = t.leaf(w.clone());
                let y = t.matmul_t(x, wn).unwrap();
                let y = t.scale(y, 0.7).unwrap();
                let z = t.add(y, y).unwrap();
                sum_weighted(t, z, 6)
            },
            1e-6,
        );
    }

    #[test]
    fn attention_gradients() {
        let shape = AttentionShape { batch: 2, seq_len: 4, heads: 2 };
        let mut rng = Rng::new(7);
        let q = rng.gaussian_matrix(8, 6, 1.0);
        let k = rng.gaussian_matrix(8, 6, 1.0);
        let v = rng.gaussian_matrix(8, 6, 1.0);
        let (k2, v2) = (k.clone(), v.clone());
        finite_diff_check(q.clone(), move |t, q| {
            let kn = t.leaf(k2.clone());
            let vn = t.leaf(v2.clone());
            let o = t.causal_attention(q, kn, vn, shape).unwrap();
            sum_weighted(t, o, 8)
        }, 1e-6);
        let (q2, v3) = (q.clone(), v.clone());
        finite_diff_check(k.clone(), move |t, k| {
            let qn = t.leaf(q2.clone());
            let vn = t.leaf(v3.clone());
            let o = t.causal_attention(qn, k, vn, shape).unwrap();
            sum_weighted(t, o, 9)
        }, 1e-6);
        finite_diff_check(v, move |t, v| {
            let qn = t.leaf(q.clone());
            let kn = t.leaf(k.clone());
            let o = t.causal_attention(qn, kn, v, shape).unwrap();
            sum_weighted(t, o, 10)
        }, 1e-6);
    }

    #[test]
    fn cross_entropy_and_embedding_gradients() {
        let table = Rng::new(11).gaussian_matrix(6, 4, 1.0);
        finite_diff_check(
            table,
            |t, table| {
                let e = t.embed(table, &[1, 3, 3, 0]).unwrap();
                let w = t.leaf(Rng::new(12).gaussian_matrix(5, 4, 1.0));
                let logits = t.matmul_t(e, w).unwrap();
                t.cross_entropy(logits, &[Some(2), None, Some(4), Some(0)]).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let shape = AttentionShape { batch: 1, seq_len: 5, heads: 1 };
        let mut rng = Rng::new(13);
        let q = rng.gaussian_matrix(5, 3, 1.0);
        let k = rng.gaussian_matrix(5, 3, 1.0);
        let v = rng.gaussian_matrix(5, 3, 1.0);
        let (base, _) = kernels::causal_attention(&q, &k, &v, shape).unwrap();
        let mut v2 = v.clone();
        v2.row_mut(4).iter_mut().for_each(|x| *x += 10.0);
        let (moved, _) = kernels::causal_attention(&q, &k, &v2, shape).unwrap();
        for r in 0..4 {
            assert_eq!(base.row(r), moved.row(r));
        }
    }

    #[test]
    fn backward_rejects_foreign_and_non_scalar_nodes() {
        let mut tape = Tape::new();
        let x = tape.leaf(DenseMatrix::zeros(2, 2));
        assert!(tape.backward(x).is_err());
        assert!(tape.backward(NodeId(99)).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(DenseMatrix::from_rows(&[&[2.0]]));
        let y = tape.matmul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        // d(x² + x)/dx = 2x + 1
        assert_eq!(g.get(x).unwrap().get(0, 0), 5.0);
    }
}
