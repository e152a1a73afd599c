use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::{self, Op, Segments, SparseOperator};
use super::tensor::Tensor;
use super::Real;
use crate::error::{Error, Result};

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; kept for leaves only.
    grad: Option<Vec<Real>>,
    label: Option<String>,
}

/// Records a forward computation so it can be differentiated.
///
/// Nodes are appended after their parents, so the node order is already a
/// topological order of the graph.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, label: Option<String>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            label,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, None)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, None)
    }

    /// Named trainable leaf; see [`super::ParamStore::bind`].
    pub fn param(&self, name: &str, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, Some(name.to_string()))
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad matches value"))
    }

    /// `(name, gradient)` for every named leaf that holds a gradient.
    pub fn labelled_grads(&self) -> Vec<(String, Vec<Real>)> {
        self.nodes
            .borrow()
            .iter()
            .filter_map(|n| Some((n.label.clone()?, n.grad.clone()?)))
            .collect()
    }

    /// Resets all accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    fn record(&self, op: Op) -> Result<Var<'_>> {
        let parents = op.parents();
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let value = ops::forward(&op, |i| &nodes[i].value)?;
            (value, parents.iter().any(|&p| nodes[p].requires_grad))
        };
        Ok(self.push(value, op, requires_grad, None))
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let shape = nodes[root].value.shape().to_vec();
        if nodes[root].value.numel() != 1 {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut upstream: Vec<Option<Vec<Real>>> = vec![None; root + 1];
        upstream[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = upstream[id].take() else {
                continue;
            };
            if !nodes[id].requires_grad {
                continue;
            }
            if matches!(nodes[id].op, Op::Leaf) {
                match &mut nodes[id].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            let parents = nodes[id].op.parents();
            let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let contributions = {
                let nodes_ref = &*nodes;
                ops::backward(
                    &nodes_ref[id].op,
                    &nodes_ref[id].value,
                    &g,
                    |i| &nodes_ref[i].value,
                    &needs,
                )
            };
            for (&p, contrib) in parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut upstream[p] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, v)| *a += v),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        // Trainable leaves that do not influence the root get an explicit zero.
        for node in nodes.iter_mut().take(root + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> Real {
        self.with_value(Tensor::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Constant copy of this value, cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    /// Accumulates d(self)/d(leaf) into every trainable leaf. `self` must
    /// hold exactly one element.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    pub fn matmul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.record(Op::MatMul(self.id, rhs.id))
    }

    /// Elementwise sum. A rank-1 (or `1×m`) right operand is broadcast over
    /// the rows of a matrix.
    pub fn add(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs && ls.len() == 2 {
            return self.tape.record(Op::AddRow(self.id, rhs.id));
        }
        self.tape.record(Op::Add(self.id, rhs.id))
    }

    pub fn sub(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.record(Op::Sub(self.id, rhs.id))
    }

    pub fn mul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.record(Op::Mul(self.id, rhs.id))
    }

    pub fn scale(&self, k: Real) -> Result<Var<'t>> {
        self.tape.record(Op::Scale(self.id, k))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    /// Adds a constant to every element.
    pub fn shift(&self, k: Real) -> Result<Var<'t>> {
        self.tape.record(Op::Shift(self.id, k))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.tape.record(Op::Relu(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.tape.record(Op::Exp(self.id))
    }

    /// Natural logarithm; rejects non-positive inputs.
    pub fn log(&self) -> Result<Var<'t>> {
        self.tape.record(Op::Log(self.id))
    }

    pub fn sum(&self, axis: usize) -> Result<Var<'t>> {
        self.tape.record(Op::Sum(self.id, Some(axis)))
    }

    pub fn sum_all(&self) -> Result<Var<'t>> {
        self.tape.record(Op::Sum(self.id, None))
    }

    pub fn mean(&self, axis: usize) -> Result<Var<'t>> {
        self.tape.record(Op::Mean(self.id, Some(axis)))
    }

    pub fn mean_all(&self) -> Result<Var<'t>> {
        self.tape.record(Op::Mean(self.id, None))
    }

    /// Concatenation along the last axis.
    pub fn concat(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.record(Op::Concat(self.id, rhs.id))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&self, start: usize, end: usize) -> Result<Var<'t>> {
        self.tape.record(Op::Slice(self.id, start, end))
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.tape.record(Op::Softmax(self.id))
    }

    /// Per-row `-log softmax(x)[target]`, computed stably from logits.
    pub fn nll_log_softmax(&self, targets: &[usize]) -> Result<Var<'t>> {
        self.tape
            .record(Op::NllLogSoftmax(self.id, Rc::from(targets.to_vec())))
    }

    /// Per-row squared Euclidean distance to `rhs`.
    pub fn row_sq_dist(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&rhs);
        self.tape.record(Op::RowSqDist(self.id, rhs.id))
    }

    /// Left-multiplies by a constant sparse operator.
    pub fn propagate(&self, op: &Rc<SparseOperator>) -> Result<Var<'t>> {
        self.tape.record(Op::Propagate(self.id, Rc::clone(op)))
    }

    /// Mean of the rows belonging to each segment.
    pub fn segment_mean(&self, seg: &Rc<Segments>) -> Result<Var<'t>> {
        self.tape.record(Op::SegmentMean(self.id, Rc::clone(seg)))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        self.tape
            .record(Op::GatherRows(self.id, Rc::from(idx.to_vec())))
    }

    /// `log(mean(exp(x)))` over all elements, shifted by the (constant)
    /// maximum for stability.
    pub fn log_mean_exp(&self) -> Result<Var<'t>> {
        let max = self.with_value(|t| t.data().iter().copied().fold(Real::NEG_INFINITY, Real::max));
        if !max.is_finite() {
            return Err(Error::NonFinite("log_mean_exp input".into()));
        }
        self.shift(-max)?.exp()?.mean_all()?.log()?.shift(max)
    }
}
