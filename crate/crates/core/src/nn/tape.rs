//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! Values are computed eagerly as ops are pushed; `backward` then walks the
//! tape in reverse accumulating gradients. Scalars are 1×1 matrices.

use std::collections::HashMap;

use ndarray::{Array2, Axis};

use super::params::ParamId;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant input; no gradient.
    Constant,
    /// Trainable leaf owned by a parameter set.
    Param(ParamId),
    /// C = A · B
    MatMul(NodeId, NodeId),
    /// C = A · Bᵀ
    MatMulTransB(NodeId, NodeId),
    /// C = A + B (same shape)
    Add(NodeId, NodeId),
    /// C = A + 1·b (bias broadcast over rows; b is 1×cols)
    AddRowBroadcast(NodeId, NodeId),
    /// C = c · A
    Scale(NodeId, f64),
    /// C = max(A, 0)
    Relu(NodeId),
    /// Row-wise softmax with key masking; fully masked query rows output 0.
    MaskedSoftmaxRows { input: NodeId },
    /// Row gather from an embedding table.
    EmbedGather { table: NodeId, ids: Vec<usize> },
    /// Per-row layer normalization with gain and bias (both 1×cols).
    LayerNormRows { input: NodeId, gain: NodeId, bias: NodeId },
    /// Mean over unmasked rows → 1×cols.
    MeanPoolRows { input: NodeId, mask: Vec<bool> },
    /// Identity forward; backward multiplies the gradient by −λ.
    GradReverse { input: NodeId, lambda: f64 },
    /// Identity forward; no backward.
    Detach,
    /// Scalar softmax cross-entropy of a 1×C logit row against a class.
    SoftmaxCrossEntropy { logits: NodeId, target: usize },
    /// Scalar sigmoid binary cross-entropy of a 1×1 logit.
    SigmoidBce { logit: NodeId, target: f64 },
    /// Scalar linear combination Σ cᵢ·xᵢ of scalar nodes.
    LinComb(Vec<(NodeId, f64)>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients keyed by parameter id.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.by_param.get(&id)
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[(0, 0)]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulTransB(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a 1×cols bias row to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias).row(0).to_owned();
        let value = self.value(a) + &b;
        self.push(value, Op::AddRowBroadcast(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Row-wise softmax over scores, ignoring masked key columns. Query
    /// rows with no unmasked key produce an all-zero row (and propagate no
    /// gradient).
    pub fn masked_softmax_rows(&mut self, scores: NodeId, key_mask: &[bool]) -> NodeId {
        let input = self.value(scores);
        let (rows, cols) = input.dim();
        assert_eq!(cols, key_mask.len(), "key mask length mismatch");
        let mut out = Array2::zeros((rows, cols));
        for r in 0..rows {
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if key_mask[c] {
                    max = max.max(input[(r, c)]);
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut denom = 0.0;
            for c in 0..cols {
                if key_mask[c] {
                    let e = (input[(r, c)] - max).exp();
                    out[(r, c)] = e;
                    denom += e;
                }
            }
            for c in 0..cols {
                out[(r, c)] /= denom;
            }
        }
        self.push(out, Op::MaskedSoftmaxRows { input: scores })
    }

    pub fn embed_gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let cols = t.ncols();
        let mut out = Array2::zeros((ids.len(), cols));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::EmbedGather { table, ids: ids.to_vec() })
    }

    /// Per-row layer norm: `gain ⊙ (x − μ)/√(σ² + ε) + bias` with biased
    /// variance and ε = 1e-5.
    pub fn layer_norm_rows(&mut self, input: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let x = self.value(input);
        let g = self.value(gain).row(0).to_owned();
        let b = self.value(bias).row(0).to_owned();
        let (rows, cols) = x.dim();
        let mut out = Array2::zeros((rows, cols));
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + EPS).sqrt();
            for c in 0..cols {
                out[(r, c)] = g[c] * (x[(r, c)] - mean) * inv_std + b[c];
            }
        }
        self.push(out, Op::LayerNormRows { input, gain, bias })
    }

    /// Mean of unmasked rows; panics if the mask has no true entry.
    pub fn mean_pool_rows(&mut self, input: NodeId, mask: &[bool]) -> NodeId {
        let x = self.value(input);
        assert_eq!(x.nrows(), mask.len(), "pool mask length mismatch");
        let n = mask.iter().filter(|m| **m).count();
        assert!(n > 0, "mean pool over an all-masked input");
        let mut acc = ndarray::Array1::<f64>::zeros(x.ncols());
        for (r, &keep) in mask.iter().enumerate() {
            if keep {
                acc += &x.row(r);
            }
        }
        acc /= n as f64;
        let out = acc.insert_axis(Axis(0));
        self.push(out, Op::MeanPoolRows { input, mask: mask.to_vec() })
    }

    pub fn grad_reverse(&mut self, input: NodeId, lambda: f64) -> NodeId {
        let value = self.value(input).clone();
        self.push(value, Op::GradReverse { input, lambda })
    }

    pub fn detach(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).clone();
        self.push(value, Op::Detach)
    }

    /// Cross-entropy of a 1×C logit row against `target`, as a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.nrows(), 1, "logits must be a single row");
        assert!(target < z.ncols(), "target class out of range");
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let loss = log_sum - z[(0, target)];
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy { logits, target },
        )
    }

    /// Binary cross-entropy of a 1×1 logit against `target` ∈ {0, 1},
    /// computed in the numerically stable logit form.
    pub fn sigmoid_bce(&mut self, logit: NodeId, target: f64) -> NodeId {
        let z = self.scalar(logit);
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        self.push(Array2::from_elem((1, 1), loss), Op::SigmoidBce { logit, target })
    }

    /// Scalar linear combination Σ cᵢ·xᵢ. Terms with zero coefficient
    /// contribute nothing to forward or backward.
    pub fn lincomb(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let mut acc = 0.0;
        for &(id, c) in terms {
            acc += c * self.scalar(id);
        }
        self.push(Array2::from_elem((1, 1), acc), Op::LinComb(terms.to_vec()))
    }

    /// Reverse pass from a scalar loss node; returns parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant | Op::Detach => {}
                Op::Param(pid) => {
                    out.by_param
                        .entry(*pid)
                        .and_modify(|g| *g += &grad)
                        .or_insert(grad);
                }
                Op::MatMul(a, b) => {
                    let da = grad.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&grad);
                    accumulate(&mut grads, a.0, da);
                    accumulate(&mut grads, b.0, db);
                }
                Op::MatMulTransB(a, b) => {
                    let da = grad.dot(self.value(*b));
                    let db = grad.t().dot(self.value(*a));
                    accumulate(&mut grads, a.0, da);
                    accumulate(&mut grads, b.0, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a.0, grad.clone());
                    accumulate(&mut grads, b.0, grad);
                }
                Op::AddRowBroadcast(a, bias) => {
                    let db = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, a.0, grad);
                    accumulate(&mut grads, bias.0, db);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, a.0, &grad * *c);
                }
                Op::Relu(a) => {
                    let mut da = grad;
                    da.zip_mut_with(self.value(*a), |g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, a.0, da);
                }
                Op::MaskedSoftmaxRows { input } => {
                    // dZ = S ⊙ (dS − rowsum(dS ⊙ S)); zero rows give zero.
                    let s = &self.nodes[i].value;
                    let mut dz = Array2::zeros(s.dim());
                    for r in 0..s.nrows() {
                        let dot: f64 =
                            (0..s.ncols()).map(|c| grad[(r, c)] * s[(r, c)]).sum();
                        for c in 0..s.ncols() {
                            dz[(r, c)] = s[(r, c)] * (grad[(r, c)] - dot);
                        }
                    }
                    accumulate(&mut grads, input.0, dz);
                }
                Op::EmbedGather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Array2::zeros(t.dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &grad.row(r);
                    }
                    accumulate(&mut grads, table.0, dt);
                }
                Op::LayerNormRows { input, gain, bias } => {
                    const EPS: f64 = 1e-5;
                    let x = self.value(*input);
                    let g = self.value(*gain).row(0).to_owned();
                    let (rows, cols) = x.dim();
                    let mut dx = Array2::zeros((rows, cols));
                    let mut dg = Array2::zeros((1, cols));
                    let mut db = Array2::zeros((1, cols));
                    for r in 0..rows {
                        let row = x.row(r);
                        let mean = row.sum() / cols as f64;
                        let var =
                            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                        let inv_std = 1.0 / (var + EPS).sqrt();
                        let xhat: Vec<f64> =
                            row.iter().map(|v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            (0..cols).map(|c| grad[(r, c)] * g[c]).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dxhat_xhat = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / cols as f64;
                        for c in 0..cols {
                            dx[(r, c)] = inv_std
                                * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                            dg[(0, c)] += grad[(r, c)] * xhat[c];
                            db[(0, c)] += grad[(r, c)];
                        }
                    }
                    accumulate(&mut grads, input.0, dx);
                    accumulate(&mut grads, gain.0, dg);
                    accumulate(&mut grads, bias.0, db);
                }
                Op::MeanPoolRows { input, mask } => {
                    let x = self.value(*input);
                    let n = mask.iter().filter(|m| **m).count() as f64;
                    let mut dx = Array2::zeros(x.dim());
                    for (r, &keep) in mask.iter().enumerate() {
                        if keep {
                            let mut row = dx.row_mut(r);
                            row.assign(&(&grad.row(0) / n));
                        }
                    }
                    accumulate(&mut grads, input.0, dx);
                }
                Op::GradReverse { input, lambda } => {
                    accumulate(&mut grads, input.0, &grad * (-*lambda));
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let z = self.value(*logits);
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                    let denom: f64 = exps.iter().sum();
                    let scale = grad[(0, 0)];
                    let mut dz = Array2::zeros(z.dim());
                    for c in 0..z.ncols() {
                        let p = exps[c] / denom;
                        dz[(0, c)] = scale * (p - if c == *target { 1.0 } else { 0.0 });
                    }
                    accumulate(&mut grads, logits.0, dz);
                }
                Op::SigmoidBce { logit, target } => {
                    let z = self.scalar(*logit);
                    let p = 1.0 / (1.0 + (-z).exp());
                    let dz = grad[(0, 0)] * (p - target);
                    accumulate(&mut grads, logit.0, Array2::from_elem((1, 1), dz));
                }
                Op::LinComb(terms) => {
                    let scale = grad[(0, 0)];
                    for &(id, c) in terms {
                        if c != 0.0 {
                            accumulate(
                                &mut grads,
                                id.0,
                                Array2::from_elem((1, 1), scale * c),
                            );
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], idx: usize, delta: Array2<f64>) {
    match &mut grads[idx] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}
