//! Reverse-mode differentiation over matrix-valued expressions.
//!
//! A tape records primitive ops in evaluation order; `backward` walks the
//! records in exact reverse order and accumulates adjoints. One tape per
//! training step, single-threaded.

use std::sync::Arc;

use super::{Matrix, TensorError, TensorResult};

/// Constant linear operator applied inside a tape (e.g. a sparse propagation
/// matrix owned by the graph layer). The operator itself is never
/// differentiated; only its dense operand is.
pub trait LinearMap: Send + Sync {
    fn out_rows(&self) -> usize;
    fn in_rows(&self) -> usize;
    /// y = A x
    fn apply(&self, x: &Matrix) -> TensorResult<Matrix>;
    /// y = A^T x
    fn apply_transpose(&self, x: &Matrix) -> TensorResult<Matrix>;
}

/// Handle to a recorded tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    /// Adds a 1xC bias row to every row of the operand.
    AddRowBroadcast(usize, usize),
    /// mul * x + add recorded the multiplier; the shift has zero derivative.
    Affine(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    /// Elementwise sqrt; the adjoint at exactly zero is taken as zero.
    Sqrt(usize),
    SliceRows(usize, Vec<usize>),
    ConcatRows(usize, usize),
    ReduceSum(usize),
    /// Constant linear operator times the operand.
    MapConst(Arc<dyn LinearMap>, usize),
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// None until backward runs; None per node when the root does not
    /// depend on it.
    adjoints: Vec<Option<Matrix>>,
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

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> TensorResult<&Node> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownNode(id.0))
    }

    /// Differentiable input; its adjoint is available after `backward`.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        Ok(self.push(Op::MatMul(a.0, b.0), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.add(&self.node(b)?.value)?;
        Ok(self.push(Op::Add(a.0, b.0), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.sub(&self.node(b)?.value)?;
        Ok(self.push(Op::Sub(a.0, b.0), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.hadamard(&self.node(b)?.value)?;
        Ok(self.push(Op::Hadamard(a.0, b.0), value))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.add_row_broadcast(&self.node(bias)?.value)?;
        Ok(self.push(Op::AddRowBroadcast(a.0, bias.0), value))
    }

    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.map(|v| mul * v + add)?;
        Ok(self.push(Op::Affine(a.0, mul), value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.map(|v| 1.0 / (1.0 + (-v).exp()))?;
        Ok(self.push(Op::Sigmoid(a.0), value))
    }

    pub fn tanh(&mut self, a: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.map(f64::tanh)?;
        Ok(self.push(Op::Tanh(a.0), value))
    }

    pub fn sqrt(&mut self, a: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.map(f64::sqrt)?;
        Ok(self.push(Op::Sqrt(a.0), value))
    }

    pub fn slice_rows(&mut self, a: NodeId, indices: &[usize]) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.select_rows(indices)?;
        Ok(self.push(Op::SliceRows(a.0, indices.to_vec()), value))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let value = self.node(a)?.value.vcat(&self.node(b)?.value)?;
        Ok(self.push(Op::ConcatRows(a.0, b.0), value))
    }

    /// Sums all entries into a 1x1 matrix.
    pub fn reduce_sum(&mut self, a: NodeId) -> TensorResult<NodeId> {
        let s = self.node(a)?.value.sum();
        if !s.is_finite() {
            return Err(TensorError::NonFinite { op: "reduce_sum" });
        }
        Ok(self.push(Op::ReduceSum(a.0), Matrix::new(1, 1, vec![s])?))
    }

    pub fn map_const(&mut self, map: Arc<dyn LinearMap>, a: NodeId) -> TensorResult<NodeId> {
        let value = map.apply(&self.node(a)?.value)?;
        Ok(self.push(Op::MapConst(map, a.0), value))
    }

    /// Runs reverse-mode accumulation from a scalar root. Adjoints of all
    /// nodes become available through `grad`.
    pub fn backward(&mut self, root: NodeId) -> TensorResult<()> {
        let root_node = self.node(root)?;
        let (r, c) = root_node.value.shape();
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarRoot { rows: r, cols: c });
        }
        let mut adjoints: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[root.0] = Some(Matrix::new(1, 1, vec![1.0])?);

        for idx in (0..=root.0).rev() {
            // Operands always precede results, so this slot is final.
            let Some(adj) = adjoints[idx].take() else { continue };
            // (operand, contribution) pairs of this node.
            let mut pending: Vec<(usize, Matrix)> = Vec::with_capacity(2);
            match &self.nodes[idx].op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    pending.push((*a, adj.matmul_bt(&self.nodes[*b].value)?));
                    pending.push((*b, self.nodes[*a].value.matmul_at(&adj)?));
                }
                Op::Add(a, b) => {
                    pending.push((*a, adj.clone()));
                    pending.push((*b, adj.clone()));
                }
                Op::Sub(a, b) => {
                    pending.push((*a, adj.clone()));
                    pending.push((*b, adj.scale(-1.0)?));
                }
                Op::Hadamard(a, b) => {
                    pending.push((*a, adj.hadamard(&self.nodes[*b].value)?));
                    pending.push((*b, adj.hadamard(&self.nodes[*a].value)?));
                }
                Op::AddRowBroadcast(a, bias) => {
                    pending.push((*a, adj.clone()));
                    let cols = adj.cols();
                    let mut sums = vec![0.0; cols];
                    for r in 0..adj.rows() {
                        for (c, s) in sums.iter_mut().enumerate() {
                            *s += adj.get(r, c);
                        }
                    }
                    pending.push((*bias, Matrix::new(1, cols, sums)?));
                }
                Op::Affine(a, mul) => {
                    pending.push((*a, adj.scale(*mul)?));
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[idx].value;
                    pending.push((*a, adj.hadamard(&s.map(|v| v * (1.0 - v))?)?));
                }
                Op::Tanh(a) => {
                    let t = &self.nodes[idx].value;
                    pending.push((*a, adj.hadamard(&t.map(|v| 1.0 - v * v)?)?));
                }
                Op::Sqrt(a) => {
                    let s = &self.nodes[idx].value;
                    pending.push((
                        *a,
                        adj.hadamard(&s.map(|v| if v == 0.0 { 0.0 } else { 0.5 / v })?)?,
                    ));
                }
                Op::SliceRows(a, indices) => {
                    let mut da = Matrix::zeros(self.nodes[*a].value.rows(), adj.cols());
                    let cols = adj.cols();
                    for (k, &src) in indices.iter().enumerate() {
                        for c in 0..cols {
                            da.data_mut()[src * cols + c] += adj.get(k, c);
                        }
                    }
                    pending.push((*a, da));
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.nodes[*a].value.rows();
                    let top: Vec<usize> = (0..ra).collect();
                    let bottom: Vec<usize> = (ra..adj.rows()).collect();
                    pending.push((*a, adj.select_rows(&top)?));
                    pending.push((*b, adj.select_rows(&bottom)?));
                }
                Op::ReduceSum(a) => {
                    let g = adj.get(0, 0);
                    let src = &self.nodes[*a].value;
                    pending.push((*a, Matrix::new(src.rows(), src.cols(), vec![g; src.len()])?));
                }
                Op::MapConst(map, a) => {
                    pending.push((*a, map.apply_transpose(&adj)?));
                }
            }
            for (target, grad) in pending {
                adjoints[target] = Some(match adjoints[target].take() {
                    Some(acc) => acc.add(&grad)?,
                    None => grad,
                });
            }
            adjoints[idx] = Some(adj);
        }
        self.adjoints = adjoints;
        Ok(())
    }

    /// Adjoint of a node after `backward`; None when the root does not
    /// depend on it (a zero gradient).
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }
}
