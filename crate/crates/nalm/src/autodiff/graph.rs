//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation is evaluated eagerly when it is
//! recorded, and [`Graph::backward`] replays the records in reverse to
//! accumulate gradients. Graphs are rebuilt per batch — the models here are a
//! few dozen nodes on matrices of at most a few thousand elements, so
//! retracing costs nothing and keeps the layer code straightforward.
//!
//! The primitive set is exactly what the module forward definitions need:
//! matrix product, element-wise arithmetic, the usual scalar nonlinearities,
//! clamping, a couple of row-vector broadcasts, column softmax, reductions,
//! and a fused selective product (`gated_prod`). `sign` and the negative-input
//! mask are treated as constants: they contribute zero gradient.

use crate::error::{NalmError, Result};
use crate::matrix::Matrix;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// A persistent value with an accumulated gradient, owned by a model and
/// bound into a fresh graph each iteration via [`Graph::param`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(value: Matrix, requires_grad: bool) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Tensor { value, grad, requires_grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Input or parameter; `trainable` marks it for gradient checks.
    Leaf { trainable: bool },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// Element-wise minimum; the smaller branch receives the gradient.
    Min(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Cos(NodeId),
    Abs(NodeId),
    Relu(NodeId),
    /// sign(x) in {-1, 0, 1}; constant under differentiation.
    Sign(NodeId),
    /// pi where x < 0, else 0; constant under differentiation.
    NegMaskPi(NodeId),
    /// a * x + b with scalar constants.
    Affine { x: NodeId, a: f64, b: f64 },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    /// out[b][j] = a[b][j] * v[0][j]
    MulRowVec(NodeId, NodeId),
    /// out[b][j] = a[b][j] + v[0][j]
    AddRowVec(NodeId, NodeId),
    /// out[b][o] = prod_i (v[b][i] * w[i][o] + 1 - w[i][o])
    GatedProd(NodeId, NodeId),
    RowSum(NodeId),
    RowProd(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Softmax over each column independently.
    SoftmaxCols(NodeId),
    ColSlice { x: NodeId, col: usize },
    HStack(Vec<NodeId>),
    Transpose(NodeId),
    /// Mean squared error between two same-shape matrices; 1x1 output.
    Mse(NodeId, NodeId),
}

struct Node {
    op: Op,
    value: Matrix,
    grad: Matrix,
}

/// Reverse-mode tape. Values are computed when ops are recorded.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(64) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    /// Overwrites a leaf's stored value (used by finite-difference probes).
    pub fn set_leaf_value(&mut self, id: NodeId, r: usize, c: usize, v: f64) {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Leaf { .. }));
        self.nodes[id.0].value.set(r, c, v);
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NalmError::ShapeMismatch { op, lhs: self.shape(a), rhs: self.shape(b) });
        }
        Ok(())
    }

    /// Records a constant input (no gradient).
    pub fn input(&mut self, value: &Matrix) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value.clone())
    }

    /// Records a trainable parameter leaf, copying the tensor's current value.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: t.requires_grad }, t.value.clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(NalmError::ShapeMismatch { op: "matmul", lhs: (ar, ac), rhs: (br, bc) });
        }
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("div", a, b)?;
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x / y);
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("min", a, b)?;
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, f64::min);
        Ok(self.push(Op::Min(a, b), v))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    /// Natural log. Errors on any non-positive element; guarded forms compose
    /// `abs` and an epsilon shift first so they can never hit this.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.nodes[x.0].value.as_slice().iter().find(|v| **v <= 0.0) {
            return Err(NalmError::NonPositiveLog { op: "ln", value: bad });
        }
        let v = self.nodes[x.0].value.map(f64::ln);
        Ok(self.push(Op::Ln(x), v))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::cos);
        self.push(Op::Cos(x), v)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::abs);
        self.push(Op::Abs(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(|v| v.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn sign(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.push(Op::Sign(x), v)
    }

    /// pi where the element is negative, 0 elsewhere.
    pub fn neg_mask_pi(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(|v| if v < 0.0 { std::f64::consts::PI } else { 0.0 });
        self.push(Op::NegMaskPi(x), v)
    }

    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> NodeId {
        let v = self.nodes[x.0].value.map(|v| a * v + b);
        self.push(Op::Affine { x, a, b }, v)
    }

    pub fn scale(&mut self, x: NodeId, a: f64) -> NodeId {
        self.affine(x, a, 0.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, b: f64) -> NodeId {
        self.affine(x, 1.0, b)
    }

    /// 1 - x.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 1.0)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.nodes[x.0].value.map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, v)
    }

    pub fn clamp_max(&mut self, x: NodeId, hi: f64) -> NodeId {
        self.clamp(x, f64::NEG_INFINITY, hi)
    }

    /// Multiplies every row of `a` element-wise by the row vector `v` (1 x m).
    pub fn mul_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (_, ac) = self.shape(a);
        let (vr, vc) = self.shape(v);
        if vr != 1 || vc != ac {
            return Err(NalmError::ShapeMismatch { op: "mul_row_vec", lhs: self.shape(a), rhs: (vr, vc) });
        }
        let av = &self.nodes[a.0].value;
        let vv = &self.nodes[v.0].value;
        let mut out = av.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, av.get(r, c) * vv.get(0, c));
            }
        }
        Ok(self.push(Op::MulRowVec(a, v), out))
    }

    /// Adds the row vector `v` (1 x m) to every row of `a`.
    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (_, ac) = self.shape(a);
        let (vr, vc) = self.shape(v);
        if vr != 1 || vc != ac {
            return Err(NalmError::ShapeMismatch { op: "add_row_vec", lhs: self.shape(a), rhs: (vr, vc) });
        }
        let av = &self.nodes[a.0].value;
        let vv = &self.nodes[v.0].value;
        let mut out = av.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, av.get(r, c) + vv.get(0, c));
            }
        }
        Ok(self.push(Op::AddRowVec(a, v), out))
    }

    /// Fused selective product: out[b][o] = prod_i (v[b][i]*w[i][o] + 1 - w[i][o]).
    ///
    /// A weight of 1 passes the input through the product, a weight of 0
    /// replaces it with the multiplicative identity. Gradients are exact:
    /// the partial product over j != i is computed by prefix/suffix scans, so
    /// zero factors are handled without dividing by them.
    pub fn gated_prod(&mut self, v: NodeId, w: NodeId) -> Result<NodeId> {
        let (b, i) = self.shape(v);
        let (wi, o) = self.shape(w);
        if wi != i {
            return Err(NalmError::ShapeMismatch { op: "gated_prod", lhs: (b, i), rhs: (wi, o) });
        }
        let out = gated_prod_forward(&self.nodes[v.0].value, &self.nodes[w.0].value);
        Ok(self.push(Op::GatedProd(v, w), out))
    }

    /// Sum over columns: n x m -> n x 1.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let mut out = Matrix::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            out.set(r, 0, xv.row(r).iter().sum());
        }
        self.push(Op::RowSum(x), out)
    }

    /// Product over columns: n x m -> n x 1.
    pub fn row_prod(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let mut out = Matrix::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            out.set(r, 0, xv.row(r).iter().product());
        }
        self.push(Op::RowProd(x), out)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Matrix::filled(1, 1, self.nodes[x.0].value.sum());
        self.push(Op::SumAll(x), v)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].value.len() as f64;
        let v = Matrix::filled(1, 1, self.nodes[x.0].value.sum() / n);
        self.push(Op::MeanAll(x), v)
    }

    /// Softmax over each column independently; every column sums to 1.
    pub fn softmax_cols(&mut self, x: NodeId) -> NodeId {
        let v = softmax_cols_forward(&self.nodes[x.0].value);
        self.push(Op::SoftmaxCols(x), v)
    }

    /// Extracts column `col` as an n x 1 matrix.
    pub fn col_slice(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if col >= c {
            return Err(NalmError::ShapeMismatch { op: "col_slice", lhs: (r, c), rhs: (0, col) });
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Matrix::zeros(r, 1);
        for row in 0..r {
            out.set(row, 0, xv.get(row, col));
        }
        Ok(self.push(Op::ColSlice { x, col }, out))
    }

    /// Concatenates n x 1 columns into an n x k matrix.
    pub fn hstack(&mut self, cols: &[NodeId]) -> Result<NodeId> {
        if cols.is_empty() {
            return Err(NalmError::InvalidInput("hstack of zero columns".into()));
        }
        let rows = self.shape(cols[0]).0;
        for &c in cols {
            if self.shape(c) != (rows, 1) {
                return Err(NalmError::ShapeMismatch { op: "hstack", lhs: (rows, 1), rhs: self.shape(c) });
            }
        }
        let mut out = Matrix::zeros(rows, cols.len());
        for (j, &c) in cols.iter().enumerate() {
            for r in 0..rows {
                out.set(r, j, self.nodes[c.0].value.get(r, 0));
            }
        }
        Ok(self.push(Op::HStack(cols.to_vec()), out))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.transpose();
        self.push(Op::Transpose(x), v)
    }

    /// Mean squared error; returns a 1x1 node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.check_same_shape("mse", pred, target)?;
        let p = &self.nodes[pred.0].value;
        let t = &self.nodes[target.0].value;
        let n = p.len() as f64;
        let sum: f64 = p.as_slice().iter().zip(t.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        Ok(self.push(Op::Mse(pred, target), Matrix::filled(1, 1, sum / n)))
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.shape(id), (1, 1));
        self.nodes[id.0].value.get(0, 0)
    }

    /// Recomputes every non-leaf value in recording order. Leaves keep their
    /// stored values, so callers may perturb a leaf and replay the tape; for
    /// unchanged leaves the result is bit-identical to the original pass.
    pub fn recompute(&mut self) {
        for idx in 0..self.nodes.len() {
            if matches!(self.nodes[idx].op, Op::Leaf { .. }) {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let value = self.compute(&op);
            self.nodes[idx].value = value;
        }
    }

    fn compute(&self, op: &Op) -> Matrix {
        let val = |id: &NodeId| &self.nodes[id.0].value;
        match op {
            Op::Leaf { .. } => unreachable!("leaves are never recomputed"),
            Op::MatMul(a, b) => val(a).matmul(val(b)),
            Op::Add(a, b) => val(a).zip_map(val(b), |x, y| x + y),
            Op::Sub(a, b) => val(a).zip_map(val(b), |x, y| x - y),
            Op::Mul(a, b) => val(a).zip_map(val(b), |x, y| x * y),
            Op::Div(a, b) => val(a).zip_map(val(b), |x, y| x / y),
            Op::Min(a, b) => val(a).zip_map(val(b), f64::min),
            Op::Tanh(x) => val(x).map(f64::tanh),
            Op::Sigmoid(x) => val(x).map(sigmoid),
            Op::Exp(x) => val(x).map(f64::exp),
            Op::Ln(x) => val(x).map(f64::ln),
            Op::Cos(x) => val(x).map(f64::cos),
            Op::Abs(x) => val(x).map(f64::abs),
            Op::Relu(x) => val(x).map(|v| v.max(0.0)),
            Op::Sign(x) => val(x).map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::NegMaskPi(x) => val(x).map(|v| if v < 0.0 { std::f64::consts::PI } else { 0.0 }),
            Op::Affine { x, a, b } => val(x).map(|v| a * v + b),
            Op::Clamp { x, lo, hi } => val(x).map(|v| v.clamp(*lo, *hi)),
            Op::MulRowVec(a, v) => {
                let (av, vv) = (val(a), val(v));
                let mut out = av.clone();
                for r in 0..out.rows() {
                    for c in 0..out.cols() {
                        out.set(r, c, av.get(r, c) * vv.get(0, c));
                    }
                }
                out
            }
            Op::AddRowVec(a, v) => {
                let (av, vv) = (val(a), val(v));
                let mut out = av.clone();
                for r in 0..out.rows() {
                    for c in 0..out.cols() {
                        out.set(r, c, av.get(r, c) + vv.get(0, c));
                    }
                }
                out
            }
            Op::GatedProd(v, w) => gated_prod_forward(val(v), val(w)),
            Op::RowSum(x) => {
                let xv = val(x);
                let mut out = Matrix::zeros(xv.rows(), 1);
                for r in 0..xv.rows() {
                    out.set(r, 0, xv.row(r).iter().sum());
                }
                out
            }
            Op::RowProd(x) => {
                let xv = val(x);
                let mut out = Matrix::zeros(xv.rows(), 1);
                for r in 0..xv.rows() {
                    out.set(r, 0, xv.row(r).iter().product());
                }
                out
            }
            Op::SumAll(x) => Matrix::filled(1, 1, val(x).sum()),
            Op::MeanAll(x) => Matrix::filled(1, 1, val(x).sum() / val(x).len() as f64),
            Op::SoftmaxCols(x) => softmax_cols_forward(val(x)),
            Op::ColSlice { x, col } => {
                let xv = val(x);
                let mut out = Matrix::zeros(xv.rows(), 1);
                for r in 0..xv.rows() {
                    out.set(r, 0, xv.get(r, *col));
                }
                out
            }
            Op::HStack(cols) => {
                let rows = self.nodes[cols[0].0].value.rows();
                let mut out = Matrix::zeros(rows, cols.len());
                for (j, c) in cols.iter().enumerate() {
                    for r in 0..rows {
                        out.set(r, j, self.nodes[c.0].value.get(r, 0));
                    }
                }
                out
            }
            Op::Transpose(x) => val(x).transpose(),
            Op::Mse(p, t) => {
                let (pv, tv) = (val(p), val(t));
                let n = pv.len() as f64;
                let sum: f64 =
                    pv.as_slice().iter().zip(tv.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum();
                Matrix::filled(1, 1, sum / n)
            }
        }
    }

    /// Accumulates d(loss)/d(node) into every node's `grad`.
    ///
    /// The loss must be a 1x1 node recorded on this graph. All node gradients
    /// are cleared first, so calling this twice from the same loss yields
    /// identical results.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(NalmError::InvalidLoss(format!("node {} not on this graph", loss.0)));
        }
        if self.shape(loss) != (1, 1) {
            return Err(NalmError::InvalidLoss(format!("loss has shape {:?}, expected (1, 1)", self.shape(loss))));
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss.0].grad.set(0, 0, 1.0);

        for idx in (0..=loss.0).rev() {
            let op = self.nodes[idx].op.clone();
            let out_grad = self.nodes[idx].grad.clone();
            if out_grad.as_slice().iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(idx, &op, &out_grad);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, op: &Op, og: &Matrix) {
        match op {
            Op::Leaf { .. } | Op::Sign(_) | Op::NegMaskPi(_) => {}
            Op::MatMul(a, b) => {
                let da = og.matmul(&self.nodes[b.0].value.transpose());
                let db = self.nodes[a.0].value.transpose().matmul(og);
                self.nodes[a.0].grad.add_assign(&da);
                self.nodes[b.0].grad.add_assign(&db);
            }
            Op::Add(a, b) => {
                self.nodes[a.0].grad.add_assign(og);
                self.nodes[b.0].grad.add_assign(og);
            }
            Op::Sub(a, b) => {
                self.nodes[a.0].grad.add_assign(og);
                let neg = og.map(|v| -v);
                self.nodes[b.0].grad.add_assign(&neg);
            }
            Op::Mul(a, b) => {
                let da = og.zip_map(&self.nodes[b.0].value, |g, bv| g * bv);
                let db = og.zip_map(&self.nodes[a.0].value, |g, av| g * av);
                self.nodes[a.0].grad.add_assign(&da);
                self.nodes[b.0].grad.add_assign(&db);
            }
            Op::Div(a, b) => {
                let bv = self.nodes[b.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                let da = og.zip_map(&bv, |g, b| g / b);
                let mut db = og.zip_map(&av, |g, a| g * a);
                db = db.zip_map(&bv, |g, b| -g / (b * b));
                self.nodes[a.0].grad.add_assign(&da);
                self.nodes[b.0].grad.add_assign(&db);
            }
            Op::Min(a, b) => {
                // Ties send the gradient to the first argument.
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let da = og.zip_map(&av.zip_map(&bv, |x, y| if x <= y { 1.0 } else { 0.0 }), |g, m| g * m);
                let db = og.zip_map(&av.zip_map(&bv, |x, y| if x > y { 1.0 } else { 0.0 }), |g, m| g * m);
                self.nodes[a.0].grad.add_assign(&da);
                self.nodes[b.0].grad.add_assign(&db);
            }
            Op::Tanh(x) => {
                let y = self.nodes[idx].value.clone();
                let dx = og.zip_map(&y, |g, y| g * (1.0 - y * y));
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.clone();
                let dx = og.zip_map(&y, |g, y| g * y * (1.0 - y));
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Exp(x) => {
                let y = self.nodes[idx].value.clone();
                let dx = og.zip_map(&y, |g, y| g * y);
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Ln(x) => {
                let xv = self.nodes[x.0].value.clone();
                let dx = og.zip_map(&xv, |g, x| g / x);
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Cos(x) => {
                let xv = self.nodes[x.0].value.clone();
                let dx = og.zip_map(&xv, |g, x| -g * x.sin());
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Abs(x) => {
                let xv = self.nodes[x.0].value.clone();
                let dx = og.zip_map(&xv, |g, x| g * x.signum() * if x == 0.0 { 0.0 } else { 1.0 });
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.clone();
                let dx = og.zip_map(&xv, |g, x| if x > 0.0 { g } else { 0.0 });
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Affine { x, a, .. } => {
                let dx = og.map(|g| g * a);
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.nodes[x.0].value.clone();
                let dx = og.zip_map(&xv, |g, x| if x > *lo && x < *hi { g } else { 0.0 });
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::MulRowVec(a, v) => {
                let av = self.nodes[a.0].value.clone();
                let vv = self.nodes[v.0].value.clone();
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut dv = Matrix::zeros(1, av.cols());
                for r in 0..av.rows() {
                    for c in 0..av.cols() {
                        let g = og.get(r, c);
                        da.set(r, c, g * vv.get(0, c));
                        dv.add_at(0, c, g * av.get(r, c));
                    }
                }
                self.nodes[a.0].grad.add_assign(&da);
                self.nodes[v.0].grad.add_assign(&dv);
            }
            Op::AddRowVec(a, v) => {
                self.nodes[a.0].grad.add_assign(og);
                let mut dv = Matrix::zeros(1, og.cols());
                for r in 0..og.rows() {
                    for c in 0..og.cols() {
                        dv.add_at(0, c, og.get(r, c));
                    }
                }
                self.nodes[v.0].grad.add_assign(&dv);
            }
            Op::GatedProd(v, w) => {
                let vv = self.nodes[v.0].value.clone();
                let wv = self.nodes[w.0].value.clone();
                let (dv, dw) = gated_prod_backward(&vv, &wv, og);
                self.nodes[v.0].grad.add_assign(&dv);
                self.nodes[w.0].grad.add_assign(&dw);
            }
            Op::RowSum(x) => {
                let (r, c) = self.shape(*x);
                let mut dx = Matrix::zeros(r, c);
                for row in 0..r {
                    let g = og.get(row, 0);
                    for col in 0..c {
                        dx.set(row, col, g);
                    }
                }
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::RowProd(x) => {
                let xv = self.nodes[x.0].value.clone();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let partials = partial_products(row);
                    let g = og.get(r, 0);
                    for (c, p) in partials.iter().enumerate() {
                        dx.set(r, c, g * p);
                    }
                }
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::SumAll(x) => {
                let g = og.get(0, 0);
                let (r, c) = self.shape(*x);
                let dx = Matrix::filled(r, c, g);
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::MeanAll(x) => {
                let (r, c) = self.shape(*x);
                let g = og.get(0, 0) / (r * c) as f64;
                let dx = Matrix::filled(r, c, g);
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::SoftmaxCols(x) => {
                let y = self.nodes[idx].value.clone();
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for c in 0..y.cols() {
                    let mut dot = 0.0;
                    for r in 0..y.rows() {
                        dot += og.get(r, c) * y.get(r, c);
                    }
                    for r in 0..y.rows() {
                        dx.set(r, c, y.get(r, c) * (og.get(r, c) - dot));
                    }
                }
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::ColSlice { x, col } => {
                for r in 0..og.rows() {
                    self.nodes[x.0].grad.add_at(r, *col, og.get(r, 0));
                }
            }
            Op::HStack(cols) => {
                for (j, c) in cols.iter().enumerate() {
                    for r in 0..og.rows() {
                        self.nodes[c.0].grad.add_at(r, 0, og.get(r, j));
                    }
                }
            }
            Op::Transpose(x) => {
                let dx = og.transpose();
                self.nodes[x.0].grad.add_assign(&dx);
            }
            Op::Mse(p, t) => {
                let pv = self.nodes[p.0].value.clone();
                let tv = self.nodes[t.0].value.clone();
                let n = pv.len() as f64;
                let g = og.get(0, 0);
                let dp = pv.zip_map(&tv, |a, b| g * 2.0 * (a - b) / n);
                let dt = dp.map(|v| -v);
                self.nodes[p.0].grad.add_assign(&dp);
                self.nodes[t.0].grad.add_assign(&dt);
            }
        }
    }

    /// Node ids of all trainable leaves, in recording order.
    pub fn trainable_leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { trainable: true }))
            .map(|(i, _)| NodeId(i))
            .collect()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gated_prod_forward(v: &Matrix, w: &Matrix) -> Matrix {
    let (b, i) = v.shape();
    let o = w.cols();
    let mut out = Matrix::zeros(b, o);
    for r in 0..b {
        for c in 0..o {
            let mut p = 1.0;
            for k in 0..i {
                let wv = w.get(k, c);
                p *= v.get(r, k) * wv + 1.0 - wv;
            }
            out.set(r, c, p);
        }
    }
    out
}

fn gated_prod_backward(v: &Matrix, w: &Matrix, og: &Matrix) -> (Matrix, Matrix) {
    let (b, i) = v.shape();
    let o = w.cols();
    let mut dv = Matrix::zeros(b, i);
    let mut dw = Matrix::zeros(i, o);
    let mut terms = vec![0.0; i];
    for r in 0..b {
        for c in 0..o {
            let g = og.get(r, c);
            if g == 0.0 {
                continue;
            }
            for (k, t) in terms.iter_mut().enumerate() {
                let wv = w.get(k, c);
                *t = v.get(r, k) * wv + 1.0 - wv;
            }
            let partials = partial_products(&terms);
            for (k, &p) in partials.iter().enumerate() {
                let wv = w.get(k, c);
                dv.add_at(r, k, g * p * wv);
                dw.add_at(k, c, g * p * (v.get(r, k) - 1.0));
            }
        }
    }
    (dv, dw)
}

fn softmax_cols_forward(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for c in 0..x.cols() {
        let mut max = f64::NEG_INFINITY;
        for r in 0..x.rows() {
            max = max.max(x.get(r, c));
        }
        let mut denom = 0.0;
        for r in 0..x.rows() {
            let e = (x.get(r, c) - max).exp();
            out.set(r, c, e);
            denom += e;
        }
        for r in 0..x.rows() {
            out.set(r, c, out.get(r, c) / denom);
        }
    }
    out
}

/// For each position, the product of all other elements (prefix/suffix scan).
fn partial_products(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![1.0; n];
    let mut prefix = 1.0;
    for i in 0..n {
        out[i] = prefix;
        prefix *= xs[i];
    }
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] *= suffix;
        suffix *= xs[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_input(g: &mut Graph, v: f64) -> NodeId {
        g.input(&Matrix::filled(1, 1, v))
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = scalar_input(&mut g, 0.0);
        let y = g.sigmoid(x);
        assert_eq!(g.scalar(y), 0.5);
    }

    #[test]
    fn tanh_at_zero() {
        let mut g = Graph::new();
        let x = scalar_input(&mut g, 0.0);
        let y = g.tanh(x);
        assert_eq!(g.scalar(y), 0.0);
    }

    #[test]
    fn row_prod_value() {
        let mut g = Graph::new();
        let x = g.input(&Matrix::from_vec(1, 3, vec![2.0, 3.0, 4.0]));
        let y = g.row_prod(x);
        assert_eq!(g.scalar(y), 24.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let t = Tensor::new(Matrix::filled(1, 1, 0.0), true);
        let x = g.param(&t);
        let y = g.sigmoid(x);
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert!((g.grad(x).get(0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let tx = Tensor::new(Matrix::filled(1, 1, 2.0), true);
        let ty = Tensor::new(Matrix::filled(1, 1, 3.0), true);
        let x = g.param(&tx);
        let y = g.param(&ty);
        let z = g.mul(x, y).unwrap();
        let loss = g.sum_all(z);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).get(0, 0), 3.0);
        assert_eq!(g.grad(y).get(0, 0), 2.0);
    }

    #[test]
    fn sign_is_constant() {
        let mut g = Graph::new();
        let t = Tensor::new(Matrix::filled(1, 1, -1.5), true);
        let x = g.param(&t);
        let s = g.sign(x);
        assert_eq!(g.value(s).get(0, 0), -1.0);
        let loss = g.sum_all(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).get(0, 0), 0.0);
    }

    #[test]
    fn ln_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.input(&Matrix::from_vec(1, 2, vec![1.0, -3.0]));
        assert!(matches!(g.ln(x), Err(NalmError::NonPositiveLog { .. })));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.input(&Matrix::zeros(2, 3));
        let b = g.input(&Matrix::zeros(3, 3));
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "got: {err}");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let a = g.input(&Matrix::zeros(2, 2));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn backward_twice_identical() {
        let mut g = Graph::new();
        let t = Tensor::new(Matrix::from_vec(1, 2, vec![0.3, -0.8]), true);
        let x = g.param(&t);
        let y = g.tanh(x);
        let loss = g.mean_all(y);
        g.backward(loss).unwrap();
        let first = g.grad(x).clone();
        g.backward(loss).unwrap();
        assert_eq!(&first, g.grad(x));
    }

    #[test]
    fn recompute_is_bit_identical() {
        let mut g = Graph::new();
        let x = g.input(&Matrix::from_vec(2, 2, vec![0.3, -1.2, 2.0, 0.7]));
        let a = g.tanh(x);
        let b = g.exp(a);
        let c = g.row_sum(b);
        let loss = g.sum_all(c);
        let before = g.value(loss).clone();
        g.recompute();
        assert_eq!(&before, g.value(loss));
    }

    #[test]
    fn gated_prod_matches_manual() {
        // weights [1, 0]: only the first input participates.
        let mut g = Graph::new();
        let v = g.input(&Matrix::from_vec(1, 2, vec![2.0, 3.0]));
        let w = g.input(&Matrix::from_vec(2, 1, vec![1.0, 0.0]));
        let y = g.gated_prod(v, w).unwrap();
        assert_eq!(g.scalar(y), 2.0);
    }

    #[test]
    fn gated_prod_gradients_with_zero_factor() {
        // A zero term must not break the partial products.
        let mut g = Graph::new();
        let tv = Tensor::new(Matrix::from_vec(1, 2, vec![0.0, 3.0]), true);
        let tw = Tensor::new(Matrix::from_vec(2, 1, vec![1.0, 1.0]), true);
        let v = g.param(&tv);
        let w = g.param(&tw);
        let y = g.gated_prod(v, w).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        // out = v0 * v1; d/dv0 = v1 = 3, d/dv1 = v0 = 0.
        assert_eq!(g.grad(v).get(0, 0), 3.0);
        assert_eq!(g.grad(v).get(0, 1), 0.0);
        // d/dw0 = (v0 - 1) * prod_others = -1 * 3 = -3.
        assert_eq!(g.grad(w).get(0, 0), -3.0);
    }

    #[test]
    fn softmax_cols_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(&Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 0.0]));
        let s = g.softmax_cols(x);
        for c in 0..2 {
            let sum: f64 = (0..3).map(|r| g.value(s).get(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
