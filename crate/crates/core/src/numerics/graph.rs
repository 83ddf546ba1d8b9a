//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] is a tape: every operation appends a node whose value is
//! computed eagerly at construction, so shape errors surface immediately
//! and name the offending node ids. Construction order is a valid
//! evaluation order; [`Graph::forward`] replays it after leaf values are
//! replaced, and [`Graph::backward`] walks it in reverse exactly once.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::matrix::{gemm_into, Matrix};
use crate::scalar::Scalar;

/// Denominator floor for clamped division and log-probability clamps.
pub const DIV_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// `op(a) * op(b)`; the flags transpose the respective operand.
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_a: bool,
        trans_b: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Elementwise `a / max(b, eps)`.
    Div(NodeId, NodeId),
    /// `a + 1·b` with `b` a single row broadcast over the rows of `a`.
    AddRow(NodeId, NodeId),
    /// `a / max(b, eps)` with `b` a single row broadcast over the rows of `a`.
    DivRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    RowSoftmax(NodeId),
    /// `ln(clamp(a, eps, 1))`.
    LogClamped(NodeId),
    /// Euclidean norm of each row, as a column.
    RowNorm(NodeId),
    SumAll(NodeId),
    ColSum(NodeId),
    ColMax(NodeId),
    BroadcastRows(NodeId, usize),
    /// `count` consecutive rows of `a` starting at `start`.
    Rows(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    StopGradient(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::DivRow(..) => "div_row",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::RowSoftmax(_) => "row_softmax",
            Op::LogClamped(_) => "log",
            Op::RowNorm(_) => "row_norm",
            Op::SumAll(_) => "sum",
            Op::ColSum(_) => "col_sum",
            Op::ColMax(_) => "col_max",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Rows(..) => "rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::StopGradient(_) => "stop_gradient",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::DivRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::RowSoftmax(a)
            | Op::LogClamped(a)
            | Op::RowNorm(a)
            | Op::SumAll(a)
            | Op::ColSum(a)
            | Op::ColMax(a)
            | Op::BroadcastRows(a, _)
            | Op::Rows(a, ..)
            | Op::StopGradient(a) => vec![*a],
            Op::ConcatCols(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op,
    value: Matrix<T>,
    trainable: bool,
}

/// Tape of matrix operations.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar output with respect to the graph leaves.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient at `id`; nodes the output does not depend on get zeros.
    pub fn get(&self, id: NodeId) -> Matrix<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Like [`get`](Self::get) but without materializing zeros.
    pub fn get_ref(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.grads[id.0].as_ref()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "leaf",
                node: id,
            });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            trainable: true,
        });
        Ok(id)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Result<NodeId> {
        let id = self.leaf(value)?;
        self.nodes[id.0].trainable = false;
        Ok(id)
    }

    /// Replaces a leaf value. Call [`forward`](Self::forward) afterwards to
    /// refresh dependent nodes.
    pub fn set_leaf(&mut self, id: NodeId, value: Matrix<T>) -> Result<()> {
        let node = self.nodes.get_mut(id.0).ok_or(Error::UnknownNode(id))?;
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::invalid(format!("node {id} is not a leaf")));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "leaf {id} is {:?}, new value is {:?}",
                node.value.shape(),
                value.shape()
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "leaf",
                node: id,
            });
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node in construction order.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.eval(&op)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    op: op.name(),
                    node: NodeId(i),
                });
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        for input in op.inputs() {
            if input.0 >= self.nodes.len() {
                return Err(Error::UnknownNode(input));
            }
        }
        self.check(&op)?;
        let id = NodeId(self.nodes.len());
        let value = self.eval(&op)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node {
            op,
            value,
            trainable: false,
        });
        Ok(id)
    }

    fn mismatch(&self, op: &Op, a: NodeId, b: NodeId) -> Error {
        Error::NodeShape {
            op: op.name(),
            lhs: a,
            rhs: b,
            lhs_shape: self.shape(a),
            rhs_shape: self.shape(b),
        }
    }

    fn check(&self, op: &Op) -> Result<()> {
        match *op {
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (ar, ac) = self.shape(a);
                let (br, bc) = self.shape(b);
                let inner_a = if trans_a { ar } else { ac };
                let inner_b = if trans_b { bc } else { br };
                if inner_a != inner_b {
                    return Err(self.mismatch(op, a, b));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                if self.shape(a) != self.shape(b) {
                    return Err(self.mismatch(op, a, b));
                }
            }
            Op::AddRow(a, b) | Op::DivRow(a, b) => {
                let (_, ac) = self.shape(a);
                if self.shape(b) != (1, ac) {
                    return Err(self.mismatch(op, a, b));
                }
            }
            Op::BroadcastRows(a, _) => {
                if self.shape(a).0 != 1 {
                    return Err(Error::Shape(format!(
                        "broadcast_rows: node {a} must have one row, has {:?}",
                        self.shape(a)
                    )));
                }
            }
            Op::Rows(a, start, count) => {
                if start + count > self.shape(a).0 {
                    return Err(Error::Shape(format!(
                        "rows: {start}..{} out of range for node {a} {:?}",
                        start + count,
                        self.shape(a)
                    )));
                }
            }
            Op::ColMax(a) => {
                if self.shape(a).0 == 0 {
                    return Err(Error::Shape(format!("col_max: node {a} has no rows")));
                }
            }
            Op::ConcatCols(ref parts) => {
                if let Some(&first) = parts.first() {
                    let rows = self.shape(first).0;
                    if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
                        return Err(self.mismatch(op, first, bad));
                    }
                } else {
                    return Err(Error::Shape("concat_cols: no inputs".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn eval(&self, op: &Op) -> Result<Matrix<T>> {
        let v = |id: NodeId| &self.nodes[id.0].value;
        let eps = T::lit(DIV_EPS);
        Ok(match *op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (a, b) = (v(a), v(b));
                let m = if trans_a { a.cols() } else { a.rows() };
                let n = if trans_b { b.rows() } else { b.cols() };
                let mut out = Matrix::zeros(m, n);
                gemm_into(a, trans_a, b, trans_b, &mut out, T::zero());
                out
            }
            Op::Add(a, b) => v(a).zip_map(v(b), |x, y| x + y)?,
            Op::Sub(a, b) => v(a).zip_map(v(b), |x, y| x - y)?,
            Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y)?,
            Op::Div(a, b) => v(a).zip_map(v(b), |x, y| x / y.max(eps))?,
            Op::AddRow(a, b) => {
                let mut out = v(a).clone();
                let row = v(b).as_slice();
                for i in 0..out.rows() {
                    for (o, &r) in out.row_mut(i).iter_mut().zip(row) {
                        *o += r;
                    }
                }
                out
            }
            Op::DivRow(a, b) => {
                let mut out = v(a).clone();
                let row: Vec<T> = v(b).as_slice().iter().map(|&d| d.max(eps)).collect();
                for i in 0..out.rows() {
                    for (o, &r) in out.row_mut(i).iter_mut().zip(&row) {
                        *o /= r;
                    }
                }
                out
            }
            Op::Scale(a, s) => v(a).scale(T::lit(s)),
            Op::Relu(a) => v(a).map(|x| x.max(T::zero())),
            Op::RowSoftmax(a) => {
                let mut out = v(a).clone();
                for i in 0..out.rows() {
                    softmax_in_place(out.row_mut(i));
                }
                out
            }
            Op::LogClamped(a) => v(a).map(|x| x.max(eps).min(T::one()).ln()),
            Op::RowNorm(a) => {
                let a = v(a);
                Matrix::from_fn(a.rows(), 1, |i, _| norm(a.row(i)))
            }
            Op::SumAll(a) => Matrix::scalar(v(a).sum()),
            Op::ColSum(a) => {
                let a = v(a);
                let mut out = Matrix::zeros(1, a.cols());
                for r in a.row_iter() {
                    for (o, &x) in out.as_mut_slice().iter_mut().zip(r) {
                        *o += x;
                    }
                }
                out
            }
            Op::ColMax(a) => {
                let a = v(a);
                let mut out = Matrix::from_vec(1, a.cols(), a.row(0).to_vec())?;
                for r in a.row_iter().skip(1) {
                    for (o, &x) in out.as_mut_slice().iter_mut().zip(r) {
                        if x > *o {
                            *o = x;
                        }
                    }
                }
                out
            }
            Op::BroadcastRows(a, n) => {
                let row = v(a).as_slice();
                let mut data = Vec::with_capacity(n * row.len());
                for _ in 0..n {
                    data.extend_from_slice(row);
                }
                Matrix::from_vec(n, row.len(), data)?
            }
            Op::Rows(a, start, count) => {
                let a = v(a);
                let c = a.cols();
                Matrix::from_vec(
                    count,
                    c,
                    a.as_slice()[start * c..(start + count) * c].to_vec(),
                )?
            }
            Op::ConcatCols(ref parts) => {
                let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| v(p)).collect();
                Matrix::hcat(&mats)?
            }
            Op::StopGradient(a) => v(a).clone(),
        })
    }

    /// Gradients of the 1x1 node `output` with respect to every trainable
    /// leaf. Constants and intermediate nodes report zeros.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>> {
        let out_node = self.nodes.get(output.0).ok_or(Error::UnknownNode(output))?;
        if out_node.value.shape() != (1, 1) {
            return Err(Error::NonScalarOutput {
                node: output,
                shape: out_node.value.shape(),
            });
        }
        let needs = self.needs_grad(output.0);
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        if needs[output.0] {
            grads[output.0] = Some(Matrix::scalar(T::one()));
        }
        for i in (0..=output.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &needs, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn needs_grad(&self, last: usize) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for i in 0..=last {
            let n = &self.nodes[i];
            needs[i] = match n.op {
                Op::Leaf => n.trainable,
                Op::StopGradient(_) => false,
                ref op => op.inputs().iter().any(|a| needs[a.0]),
            };
        }
        needs
    }

    fn propagate(&self, i: usize, g: Matrix<T>, needs: &[bool], grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[i];
        let v = |id: NodeId| &self.nodes[id.0].value;
        let want = |id: NodeId| needs[id.0];
        let eps = T::lit(DIV_EPS);
        match node.op {
            Op::Leaf | Op::StopGradient(_) => {}
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                // C = op(A) op(B)
                let (av, bv) = (v(a), v(b));
                if want(a) {
                    // dA: if !trans_a, dA = dC op(B)^T ; else dA = op(B) dC^T
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    if trans_a {
                        gemm_into(bv, trans_b, &g, true, &mut da, T::zero());
                    } else {
                        gemm_into(&g, false, bv, !trans_b, &mut da, T::zero());
                    }
                    accumulate(grads, a, da);
                }
                if want(b) {
                    // dB: if !trans_b, dB = op(A)^T dC ; else dB = dC^T op(A)
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    if trans_b {
                        gemm_into(&g, true, av, trans_a, &mut db, T::zero());
                    } else {
                        gemm_into(av, !trans_a, &g, false, &mut db, T::zero());
                    }
                    accumulate(grads, b, db);
                }
            }
            Op::Add(a, b) => match (want(a), want(b)) {
                (true, true) => {
                    accumulate(grads, a, g.clone());
                    accumulate(grads, b, g);
                }
                (true, false) => accumulate(grads, a, g),
                (false, true) => accumulate(grads, b, g),
                (false, false) => {}
            },
            Op::Sub(a, b) => {
                if want(b) {
                    accumulate(grads, b, g.scale(-T::one()));
                }
                if want(a) {
                    accumulate(grads, a, g);
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    accumulate(grads, a, g.zip_map(v(b), |x, y| x * y).expect("shape"));
                }
                if want(b) {
                    accumulate(grads, b, g.zip_map(v(a), |x, y| x * y).expect("shape"));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (v(a), v(b));
                if want(b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    for (k, o) in db.as_mut_slice().iter_mut().enumerate() {
                        let d = bv.as_slice()[k];
                        if d > eps {
                            *o = -g.as_slice()[k] * av.as_slice()[k] / (d * d);
                        }
                    }
                    accumulate(grads, b, db);
                }
                if want(a) {
                    accumulate(
                        grads,
                        a,
                        g.zip_map(bv, |x, d| x / d.max(eps)).expect("shape"),
                    );
                }
            }
            Op::AddRow(a, b) => {
                if want(b) {
                    accumulate(grads, b, col_sum(&g));
                }
                if want(a) {
                    accumulate(grads, a, g);
                }
            }
            Op::DivRow(a, b) => {
                let (av, bv) = (v(a), v(b));
                if want(b) {
                    let mut db = Matrix::<T>::zeros(1, bv.cols());
                    for r in 0..g.rows() {
                        for j in 0..g.cols() {
                            db[(0, j)] += g[(r, j)] * av[(r, j)];
                        }
                    }
                    for (j, o) in db.as_mut_slice().iter_mut().enumerate() {
                        let d = bv[(0, j)];
                        *o = if d > eps { -*o / (d * d) } else { T::zero() };
                    }
                    accumulate(grads, b, db);
                }
                if want(a) {
                    let den: Vec<T> = bv.as_slice().iter().map(|&d| d.max(eps)).collect();
                    let mut da = g;
                    for r in 0..da.rows() {
                        for (x, &d) in da.row_mut(r).iter_mut().zip(&den) {
                            *x /= d;
                        }
                    }
                    accumulate(grads, a, da);
                }
            }
            Op::Scale(a, s) => {
                let mut d = g;
                let s = T::lit(s);
                d.as_mut_slice().iter_mut().for_each(|x| *x *= s);
                accumulate(grads, a, d);
            }
            Op::Relu(a) => {
                let mut d = g;
                for (x, &y) in d.as_mut_slice().iter_mut().zip(v(a).as_slice()) {
                    if y <= T::zero() {
                        *x = T::zero();
                    }
                }
                accumulate(grads, a, d);
            }
            Op::RowSoftmax(a) => {
                // dz = s * (g - <g, s>)
                let s = &node.value;
                let mut d = g;
                for r in 0..s.rows() {
                    let dot = d
                        .row(r)
                        .iter()
                        .zip(s.row(r))
                        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                    for (o, &y) in d.row_mut(r).iter_mut().zip(s.row(r)) {
                        *o = y * (*o - dot);
                    }
                }
                accumulate(grads, a, d);
            }
            Op::LogClamped(a) => {
                let mut d = g;
                for (x, &y) in d.as_mut_slice().iter_mut().zip(v(a).as_slice()) {
                    *x = if y > eps && y < T::one() {
                        *x / y
                    } else {
                        T::zero()
                    };
                }
                accumulate(grads, a, d);
            }
            Op::RowNorm(a) => {
                let av = v(a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let n = node.value[(r, 0)];
                    if n > T::zero() {
                        let k = g[(r, 0)] / n;
                        for (o, &x) in d.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o = k * x;
                        }
                    }
                }
                accumulate(grads, a, d);
            }
            Op::SumAll(a) => {
                let (r, c) = v(a).shape();
                accumulate(grads, a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::ColSum(a) => {
                let (r, _) = v(a).shape();
                let mut d = Matrix::zeros(r, g.cols());
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(g.as_slice());
                }
                accumulate(grads, a, d);
            }
            Op::ColMax(a) => {
                let av = v(a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for j in 0..av.cols() {
                    let target = node.value[(0, j)];
                    // first row attaining the max receives the gradient
                    let r = (0..av.rows()).find(|&r| av[(r, j)] == target).unwrap_or(0);
                    d[(r, j)] = g[(0, j)];
                }
                accumulate(grads, a, d);
            }
            Op::BroadcastRows(a, _) => accumulate(grads, a, col_sum(&g)),
            Op::Rows(a, start, _) => {
                let (r, c) = v(a).shape();
                let mut d = Matrix::zeros(r, c);
                d.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                accumulate(grads, a, d);
            }
            Op::ConcatCols(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = v(p).cols();
                    if want(p) {
                        accumulate(grads, p, g.columns(start, w));
                    }
                    start += w;
                }
            }
        }
    }

    // Builders. Each validates shapes against its inputs and computes eagerly.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul {
            a,
            b,
            trans_a: false,
            trans_b: false,
        })
    }

    /// `aᵀ b`.
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul {
            a,
            b,
            trans_a: true,
            trans_b: false,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::AddRow(a, row))
    }

    pub fn div_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::DivRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowSoftmax(a))
    }

    pub fn log_clamped(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogClamped(a))
    }

    pub fn row_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowNorm(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumAll(a))
    }

    /// Mean over all entries.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len().max(1);
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn col_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::ColSum(a))
    }

    pub fn col_max(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::ColMax(a))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.push(Op::BroadcastRows(a, rows))
    }

    pub fn rows(&mut self, a: NodeId, start: usize, count: usize) -> Result<NodeId> {
        self.push(Op::Rows(a, start, count))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::StopGradient(a))
    }

    /// `x w + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], id: NodeId, g: Matrix<T>) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, &x) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn col_sum<T: Scalar>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in g.row_iter() {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(r) {
            *o += x;
        }
    }
    out
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
