//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation in execution order. Parameters from a
//! [`ParamStore`] are borrowed, never copied, so one store can back many tapes
//! at once. [`Tape::backward`] replays the records in reverse and returns a fresh
//! [`Gradients`] value; nothing is accumulated in place between passes.
//!
//! There is no implicit broadcasting. Every shape change is an explicit op.

mod backward;
mod ops;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Var),
    OneMinus(Var),
    AddScalar(Var),
    BroadcastRows(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax(Var),
    Sum(Var),
    CosineSimilarity(Var, Var),
    CosineRows(Var, Var),
    CrossEntropy(Var, usize),
    BceWithLogits(Var, Vec<T>),
    GatherRow(Var, usize),
    CircularShift(Var, Var),
    Sharpen(Var, Var),
    ReadRows(Var, Var),
    EraseAdd(Var, Var, Var, Var),
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    /// Empty for parameter nodes; their values live in the store.
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Ordered record of operations. Node ids are assigned in execution order, so
/// every record's inputs precede it.
pub struct Tape<'p, T: Real> {
    params: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    pub(crate) nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape with no parameter store; only leaves can be created.
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: t.into_data(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    /// Node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self
            .params
            .expect("Tape::param on a tape without a parameter store");
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = store.get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Vec::new(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.expect("param store").get(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].shape.iter().product()
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shape matches value")
    }

    /// The single value of a scalar node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient of a scalar root with respect to every leaf and parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.numel(root) != 1 {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        Ok(backward::run(self, root))
    }
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
    shapes: Vec<usize>,
    params: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf or parameter node; zeros when the root does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Vec<T> {
        match self.leaves.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.shapes[v.0]],
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }
}
