//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes; inputs always precede the
//! nodes that consume them, so the list order is already a topological
//! order and [`Graph::backward`] is a single reverse sweep. Graphs are
//! rebuilt per example, which keeps variable-length token and object sets
//! trivial to handle.
//!
//! The primitive set is exactly what the scorer's forward pass needs:
//! affine maps, relu/sigmoid, softmax, concatenation, row selection and
//! stacking, row means, scalar-weighted row sums, embedding lookup, and
//! binary cross-entropy.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use thiserror::Error;

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before logs.
pub const CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch between shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("bce_loss: label must be 0 or 1, got {0}")]
    InvalidLabel(f64),
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("embed: row index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
}

/// Handle to a node inside one [`Graph`]. Only meaningful for the graph
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf { parameter: bool },
    /// y = W x + b
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Softmax { x: NodeId },
    Concat { xs: Vec<NodeId> },
    /// Mean over the rows of a matrix.
    RowMean { x: NodeId },
    /// Select one row of a matrix as a vector.
    Row { x: NodeId, index: usize },
    /// Stack equal-length vectors into a matrix.
    StackRows { xs: Vec<NodeId> },
    /// out = sum_i weights[i] * rows[i, :]
    WeightedSum { weights: NodeId, rows: NodeId },
    /// Gather rows of a table by token index.
    Embed { table: NodeId, indices: Vec<usize> },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    SumAll { x: NodeId },
    /// -(y ln p + (1-y) ln(1-p)) with p clamped away from 0 and 1.
    BceLoss { p: NodeId, label: S },
}

#[derive(Debug, Clone)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Gradients keyed by node id, produced by [`Graph::backward`].
/// Every stored gradient has the same shape as the node's value.
#[derive(Debug)]
pub struct GradientMap<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Append-only computation graph.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn is_parameter(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { parameter: true })
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Non-trainable leaf.
    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf { parameter: false }, value)
    }

    /// Trainable leaf; its gradient is what the optimizer consumes.
    pub fn parameter(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf { parameter: true }, value)
    }

    /// y_i = sum_j W_ij x_j + b_i
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if !wv.is_matrix() {
            return Err(AutodiffError::BadShape {
                op: "affine",
                expected: "matrix weight",
                got: wv.shape().to_vec(),
            });
        }
        if !xv.is_vector() || wv.cols() != xv.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine",
                left: wv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        if !bv.is_vector() || bv.len() != wv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine",
                left: wv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let m = wv.rows();
        let n = wv.cols();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = bv.at(i);
            for j in 0..n {
                acc = acc + wv.at2(i, j) * xv.at(j);
            }
            out.push(acc);
        }
        Ok(self.push(Op::Affine { x, w, b }, Tensor::vector(out)))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(S::zero())).collect();
        let value = match xv.shape().len() {
            1 => Tensor::vector(data),
            _ => Tensor::matrix(xv.rows(), xv.cols(), data),
        };
        Ok(self.push(Op::Relu { x }, value))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| stable_sigmoid(v)).collect();
        let value = match xv.shape().len() {
            1 => Tensor::vector(data),
            _ => Tensor::matrix(xv.rows(), xv.cols(), data),
        };
        Ok(self.push(Op::Sigmoid { x }, value))
    }

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if !xv.is_vector() {
            return Err(AutodiffError::BadShape {
                op: "softmax",
                expected: "vector",
                got: xv.shape().to_vec(),
            });
        }
        if xv.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "softmax" });
        }
        let max = xv.data().iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = xv.data().iter().map(|&v| (v - max).exp()).collect();
        let total = exps.iter().copied().fold(S::zero(), |a, b| a + b);
        let out = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(Op::Softmax { x }, Tensor::vector(out)))
    }

    /// Concatenate vectors in order.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "concat" });
        }
        let mut out = Vec::new();
        for &id in xs {
            let v = self.value(id);
            if !v.is_vector() {
                return Err(AutodiffError::BadShape {
                    op: "concat",
                    expected: "vector",
                    got: v.shape().to_vec(),
                });
            }
            out.extend_from_slice(v.data());
        }
        Ok(self.push(Op::Concat { xs: xs.to_vec() }, Tensor::vector(out)))
    }

    /// Mean over the rows of a matrix, producing a vector.
    pub fn row_mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(AutodiffError::BadShape {
                op: "row_mean",
                expected: "matrix",
                got: xv.shape().to_vec(),
            });
        }
        let (k, d) = (xv.rows(), xv.cols());
        if k == 0 {
            return Err(AutodiffError::EmptyInput { op: "row_mean" });
        }
        let kf = S::from_usize(k).expect("row count fits scalar");
        let mut out = vec![S::zero(); d];
        for r in 0..k {
            for (c, slot) in out.iter_mut().enumerate() {
                *slot = *slot + xv.at2(r, c);
            }
        }
        for slot in out.iter_mut() {
            *slot = *slot / kf;
        }
        Ok(self.push(Op::RowMean { x }, Tensor::vector(out)))
    }

    /// Select row `index` of a matrix as a vector.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(AutodiffError::BadShape {
                op: "row",
                expected: "matrix",
                got: xv.shape().to_vec(),
            });
        }
        if index >= xv.rows() {
            return Err(AutodiffError::IndexOutOfRange {
                index,
                rows: xv.rows(),
            });
        }
        let value = Tensor::vector(xv.row(index).to_vec());
        Ok(self.push(Op::Row { x, index }, value))
    }

    /// Stack equal-length vectors into a matrix, one input per row.
    pub fn stack_rows(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "stack_rows" });
        }
        let d = self.value(xs[0]).len();
        let mut data = Vec::with_capacity(xs.len() * d);
        for &id in xs {
            let v = self.value(id);
            if !v.is_vector() || v.len() != d {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack_rows",
                    left: vec![d],
                    right: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(
            Op::StackRows { xs: xs.to_vec() },
            Tensor::matrix(xs.len(), d, data),
        ))
    }

    /// out = sum_i weights[i] * rows[i, :]
    pub fn weighted_sum(
        &mut self,
        weights: NodeId,
        rows: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let wv = self.value(weights);
        let rv = self.value(rows);
        if !wv.is_vector() || !rv.is_matrix() || wv.len() != rv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_sum",
                left: wv.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let d = rv.cols();
        let mut out = vec![S::zero(); d];
        for i in 0..wv.len() {
            let wi = wv.at(i);
            for (c, slot) in out.iter_mut().enumerate() {
                *slot = *slot + wi * rv.at2(i, c);
            }
        }
        Ok(self.push(Op::WeightedSum { weights, rows }, Tensor::vector(out)))
    }

    /// Gather `indices` rows of a table into an `n x d` matrix. The usual
    /// table node is the shared embedding parameter, so its gradient
    /// accumulates scatter-added rows.
    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, AutodiffError> {
        let tv = self.value(table);
        if !tv.is_matrix() {
            return Err(AutodiffError::BadShape {
                op: "embed",
                expected: "matrix table",
                got: tv.shape().to_vec(),
            });
        }
        if indices.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "embed" });
        }
        let d = tv.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &idx in indices {
            if idx >= tv.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    index: idx,
                    rows: tv.rows(),
                });
            }
            data.extend_from_slice(tv.row(idx));
        }
        Ok(self.push(
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
            Tensor::matrix(indices.len(), d, data),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = match av.shape().len() {
            1 => Tensor::vector(data),
            _ => Tensor::matrix(av.rows(), av.cols(), data),
        };
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = match av.shape().len() {
            1 => Tensor::vector(data),
            _ => Tensor::matrix(av.rows(), av.cols(), data),
        };
        Ok(self.push(Op::Mul { a, b }, value))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let total = self
            .value(x)
            .data()
            .iter()
            .copied()
            .fold(S::zero(), |a, b| a + b);
        Ok(self.push(Op::SumAll { x }, Tensor::scalar(total)))
    }

    /// Binary cross-entropy of a scalar probability node against a 0/1
    /// label. The probability is clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce_loss(&mut self, p: NodeId, label: S) -> Result<NodeId, AutodiffError> {
        let pv = self.value(p);
        if !pv.is_scalar() {
            return Err(AutodiffError::BadShape {
                op: "bce_loss",
                expected: "scalar probability",
                got: pv.shape().to_vec(),
            });
        }
        if label != S::zero() && label != S::one() {
            return Err(AutodiffError::InvalidLabel(
                label.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let eps = clamp_eps::<S>();
        let p_hat = pv.item().max(eps).min(S::one() - eps);
        let loss = -(label * p_hat.ln() + (S::one() - label) * (S::one() - p_hat).ln());
        Ok(self.push(Op::BceLoss { p, label }, Tensor::scalar(loss)))
    }

    /// Reverse sweep from a scalar loss node. Returns a gradient for every
    /// node the loss depends on (leaves included).
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap<S>, AutodiffError> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].clone() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {}
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x).clone();
                    let wv = self.value(*w).clone();
                    let (m, n) = (wv.rows(), wv.cols());
                    {
                        let gw = slot(&mut grads, *w, wv.shape());
                        for i in 0..m {
                            for j in 0..n {
                                let cur = gw.at2(i, j);
                                gw.data_mut()[i * n + j] = cur + g.at(i) * xv.at(j);
                            }
                        }
                    }
                    {
                        let gx = slot(&mut grads, *x, xv.shape());
                        for j in 0..n {
                            let mut acc = gx.at(j);
                            for i in 0..m {
                                acc = acc + wv.at2(i, j) * g.at(i);
                            }
                            gx.data_mut()[j] = acc;
                        }
                    }
                    {
                        let gb = slot(&mut grads, *b, &[m]);
                        for i in 0..m {
                            let cur = gb.at(i);
                            gb.data_mut()[i] = cur + g.at(i);
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).clone();
                    let gx = slot(&mut grads, *x, xv.shape());
                    for i in 0..xv.len() {
                        if xv.at(i) > S::zero() {
                            let cur = gx.at(i);
                            gx.data_mut()[i] = cur + g.at(i);
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let sv = self.nodes[id].value.clone();
                    let gx = slot(&mut grads, *x, sv.shape());
                    for i in 0..sv.len() {
                        let s = sv.at(i);
                        let cur = gx.at(i);
                        gx.data_mut()[i] = cur + g.at(i) * s * (S::one() - s);
                    }
                }
                Op::Softmax { x } => {
                    let sv = self.nodes[id].value.clone();
                    let mut dot = S::zero();
                    for i in 0..sv.len() {
                        dot = dot + g.at(i) * sv.at(i);
                    }
                    let gx = slot(&mut grads, *x, sv.shape());
                    for i in 0..sv.len() {
                        let cur = gx.at(i);
                        gx.data_mut()[i] = cur + sv.at(i) * (g.at(i) - dot);
                    }
                }
                Op::Concat { xs } => {
                    let mut offset = 0;
                    for &xid in xs {
                        let len = self.value(xid).len();
                        let shape = self.value(xid).shape().to_vec();
                        let gx = slot(&mut grads, xid, &shape);
                        for i in 0..len {
                            let cur = gx.at(i);
                            gx.data_mut()[i] = cur + g.at(offset + i);
                        }
                        offset += len;
                    }
                }
                Op::RowMean { x } => {
                    let xv = self.value(*x).clone();
                    let (k, d) = (xv.rows(), xv.cols());
                    let kf = S::from_usize(k).expect("row count fits scalar");
                    let gx = slot(&mut grads, *x, xv.shape());
                    for r in 0..k {
                        for c in 0..d {
                            let cur = gx.at2(r, c);
                            gx.data_mut()[r * d + c] = cur + g.at(c) / kf;
                        }
                    }
                }
                Op::Row { x, index } => {
                    let xv = self.value(*x).clone();
                    let d = xv.cols();
                    let gx = slot(&mut grads, *x, xv.shape());
                    for c in 0..d {
                        let cur = gx.at2(*index, c);
                        gx.data_mut()[index * d + c] = cur + g.at(c);
                    }
                }
                Op::StackRows { xs } => {
                    let d = self.value(xs[0]).len();
                    for (r, &xid) in xs.iter().enumerate() {
                        let gx = slot(&mut grads, xid, &[d]);
                        for c in 0..d {
                            let cur = gx.at(c);
                            gx.data_mut()[c] = cur + g.at2(r, c);
                        }
                    }
                }
                Op::WeightedSum { weights, rows } => {
                    let wv = self.value(*weights).clone();
                    let rv = self.value(*rows).clone();
                    let (k, d) = (rv.rows(), rv.cols());
                    {
                        let gw = slot(&mut grads, *weights, wv.shape());
                        for i in 0..k {
                            let mut acc = gw.at(i);
                            for c in 0..d {
                                acc = acc + g.at(c) * rv.at2(i, c);
                            }
                            gw.data_mut()[i] = acc;
                        }
                    }
                    {
                        let gr = slot(&mut grads, *rows, rv.shape());
                        for i in 0..k {
                            let wi = wv.at(i);
                            for c in 0..d {
                                let cur = gr.at2(i, c);
                                gr.data_mut()[i * d + c] = cur + wi * g.at(c);
                            }
                        }
                    }
                }
                Op::Embed { table, indices } => {
                    let tv = self.value(*table).clone();
                    let d = tv.cols();
                    let gt = slot(&mut grads, *table, tv.shape());
                    for (r, &idx) in indices.iter().enumerate() {
                        for c in 0..d {
                            let cur = gt.at2(idx, c);
                            gt.data_mut()[idx * d + c] = cur + g.at2(r, c);
                        }
                    }
                }
                Op::Add { a, b } => {
                    for &xid in &[*a, *b] {
                        let shape = self.value(xid).shape().to_vec();
                        let gx = slot(&mut grads, xid, &shape);
                        for i in 0..g.len() {
                            let cur = gx.at(i);
                            gx.data_mut()[i] = cur + g.at(i);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let av = self.value(*a).clone();
                    let bv = self.value(*b).clone();
                    {
                        let ga = slot(&mut grads, *a, av.shape());
                        for i in 0..g.len() {
                            let cur = ga.at(i);
                            ga.data_mut()[i] = cur + g.at(i) * bv.at(i);
                        }
                    }
                    {
                        let gb = slot(&mut grads, *b, bv.shape());
                        for i in 0..g.len() {
                            let cur = gb.at(i);
                            gb.data_mut()[i] = cur + g.at(i) * av.at(i);
                        }
                    }
                }
                Op::SumAll { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    let gs = g.item();
                    let gx = slot(&mut grads, *x, &shape);
                    for i in 0..gx.len() {
                        let cur = gx.at(i);
                        gx.data_mut()[i] = cur + gs;
                    }
                }
                Op::BceLoss { p, label } => {
                    let pv = self.value(*p).item();
                    let eps = clamp_eps::<S>();
                    // Zero gradient in the clamped region.
                    let dp = if pv <= eps || pv >= S::one() - eps {
                        S::zero()
                    } else {
                        (pv - *label) / (pv * (S::one() - pv))
                    };
                    let gp = slot(&mut grads, *p, &[1]);
                    let cur = gp.at(0);
                    gp.data_mut()[0] = cur + g.item() * dp;
                }
            }
        }
        Ok(GradientMap { grads })
    }
}

fn slot<'a, S: Scalar>(
    grads: &'a mut [Option<Tensor<S>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut Tensor<S> {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn clamp_eps<S: Scalar>() -> S {
    S::from_f64(CLAMP_EPS).expect("clamp epsilon fits scalar")
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
