//! Arena-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Nodes are appended to a [`Graph`] as operations are recorded, so the arena
//! order is already a topological order and the graph cannot contain cycles.
//! [`Graph::backward`] walks the arena in reverse and accumulates gradients
//! into every node that requires one.
//!
//! Gradients are stored on the nodes. A second call to `backward` without an
//! intervening [`Graph::reset_grads`] is rejected.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Exp(NodeId),
    SumAll(NodeId),
    Mse(NodeId, NodeId),
    SoftmaxRows(NodeId),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Exp(..) => "exp_elem",
            Op::SumAll(..) => "sum_all",
            Op::Mse(..) => "mse",
            Op::SoftmaxRows(..) => "softmax_rows",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SliceCols(a, ..)
            | Op::SliceRows(a, ..)
            | Op::Exp(a)
            | Op::SumAll(a)
            | Op::SoftmaxRows(a) => vec![*a],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    requires_grad: bool,
    op: Op,
    grad: Option<Matrix>,
}

/// A recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Records an input. Only leaves created with `requires_grad = true`
    /// (and nodes derived from them) receive gradients.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.leaf(value, false)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.leaf(value, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.node(id).value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.node(id).requires_grad
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.node(id).op.tag()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.node(id).op.parents()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if this node
    /// took part in it.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.node(id).grad.as_ref()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.node(id).value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `a` (the `1·bᵀ` bias broadcast).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&vals)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_rows(&vals)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, end)?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn exp_elem(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Mean squared difference over all entries, as a `1 × 1` node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let diff = self.value(a).sub(self.value(b))?;
        let n = diff.len() as f64;
        let v = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.push(Matrix::filled(1, 1, v), Op::Mse(a, b)))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Clears every stored gradient so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Back-propagates from a `1 × 1` loss node.
    ///
    /// Nodes reached through several paths receive the sum of the path
    /// contributions. Fails if gradients from a previous pass have not been
    /// cleared with [`Graph::reset_grads`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without reset_grads".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &op, &g)?;
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: Matrix) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return Ok(());
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => {
                *slot = Some(contribution);
                Ok(())
            }
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Matrix) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(a) {
                    let ga = g.matmul(&self.value(b).transpose())?;
                    self.accumulate(a, ga)?;
                }
                if self.requires_grad(b) {
                    let gb = self.value(a).transpose().matmul(g)?;
                    self.accumulate(b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone())?;
                self.accumulate(b, g.clone())?;
            }
            Op::AddRow(a, row) => {
                self.accumulate(a, g.clone())?;
                if self.requires_grad(row) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, &v) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(row, gr)?;
                }
            }
            Op::Scale(a, factor) => self.accumulate(a, g.scale(factor))?,
            Op::Transpose(a) => self.accumulate(a, g.transpose())?,
            Op::ConcatCols(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        self.accumulate(p, g.slice_cols(start, start + w)?)?;
                    }
                    start += w;
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.requires_grad(p) {
                        self.accumulate(p, g.slice_rows(start, start + h)?)?;
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                if self.requires_grad(a) {
                    let (r, c) = self.shape(a);
                    let mut ga = Matrix::zeros(r, c);
                    ga.set_block(0, start, g)?;
                    self.accumulate(a, ga)?;
                }
            }
            Op::SliceRows(a, start) => {
                if self.requires_grad(a) {
                    let (r, c) = self.shape(a);
                    let mut ga = Matrix::zeros(r, c);
                    ga.set_block(start, 0, g)?;
                    self.accumulate(a, ga)?;
                }
            }
            Op::Exp(a) => {
                let ga = g.hadamard(&self.nodes[idx].value)?;
                self.accumulate(a, ga)?;
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(a, Matrix::filled(r, c, g.get(0, 0)))?;
            }
            Op::Mse(a, b) => {
                let diff = self.value(a).sub(self.value(b))?;
                let k = 2.0 * g.get(0, 0) / diff.len() as f64;
                if self.requires_grad(a) {
                    self.accumulate(a, diff.scale(k))?;
                }
                if self.requires_grad(b) {
                    self.accumulate(b, diff.scale(-k))?;
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..y.cols() {
                        ga.set(i, j, yr[j] * (gr[j] - dot));
                    }
                }
                self.accumulate(a, ga)?;
            }
        }
        Ok(())
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    let cols = a.cols();
    for row in out.as_mut_slice().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
