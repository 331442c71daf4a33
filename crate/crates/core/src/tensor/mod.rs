//! Dense tensor values with reverse-mode differentiation.
//!
//! The engine records a DAG as operations run: every op output holds
//! reference-counted handles to its inputs plus a closure that turns the
//! output gradient into input gradients. [`Tensor::backward`] walks that DAG
//! once in reverse topological order and accumulates `grad` buffers on every
//! tensor that tracks gradients. Values are immutable after construction;
//! only leaf tensors (parameters, see [`crate::param::Parameter`]) may be
//! rewritten between steps, and only grad buffers mutate during backward.

mod conv;
mod linalg;
mod ops;
mod reduce;
mod resize;
mod scalar;
pub(crate) mod shape;

pub use scalar::{logistic, softplus, Scalar};

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::TensorError;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradient closure: receives the output gradient and a per-parent "needed"
/// mask, returns one gradient buffer per parent (None where not needed).
type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward_fn: Option<BackwardFn<T>>,
}

/// A dense N-dimensional array, optionally tracked for gradients.
///
/// Cloning is cheap: tensors are handles onto a shared node.
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor {
            node: Rc::new(node),
        }
    }

    /// Leaf tensor from raw data; `tracked` turns on gradient accumulation.
    pub fn leaf(data: Vec<T>, shape: &[usize], tracked: bool) -> Result<Self, TensorError> {
        let expected = shape::numel(shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
                expected,
            });
        }
        Ok(Self::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: tracked,
            parents: Vec::new(),
            backward_fn: None,
        }))
    }

    /// Untracked leaf.
    pub fn constant(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        Self::leaf(data, shape, false)
    }

    /// Rank-0 constant.
    pub fn scalar(value: T) -> Self {
        Self::constant(vec![value], &[]).expect("scalar shape is always valid")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![T::ZERO; shape::numel(shape)], shape).expect("shape matches data")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::constant(vec![value; shape::numel(shape)], shape).expect("shape matches data")
    }

    /// Internal constructor for op outputs. The output tracks gradients iff
    /// any parent does; otherwise the graph edge is dropped entirely.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward_fn: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(data.len(), shape::numel(&shape));
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::from_node(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: false,
                parents: Vec::new(),
                backward_fn: None,
            });
        }
        Self::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: true,
            parents,
            backward_fn: Some(backward_fn),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        shape::numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    /// Borrow the element buffer (row-major).
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self) -> Result<T, TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotAScalar {
                numel: self.numel(),
            });
        }
        Ok(self.node.data.borrow()[0])
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite a leaf's elements in place (optimizer updates, finite
    /// differences). Graphs built before the write must not be
    /// back-propagated afterwards; rebuild the forward pass instead.
    pub fn set_data(&self, data: &[T]) -> Result<(), TensorError> {
        if self.node.backward_fn.is_some() || !self.node.parents.is_empty() {
            return Err(TensorError::NotALeaf);
        }
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: self.shape().to_vec(),
                expected: self.numel(),
            });
        }
        self.node.data.borrow_mut().copy_from_slice(data);
        Ok(())
    }

    fn accumulate_grad(&self, contribution: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution) {
                    *g = g.add(*c);
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root. Every tensor that tracks
    /// gradients and is reachable from the root receives (accumulates)
    /// `d(root)/d(tensor)` in its grad buffer. Repeated calls keep
    /// accumulating until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarBackward {
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        // Flow through sweep-local buffers so a later backward() call cannot
        // re-read gradients persisted by an earlier one.
        let mut flow: HashMap<u64, Vec<T>> = HashMap::new();
        flow.insert(self.id(), vec![T::ONE]);
        // Reverse post-order: each node is processed after all its consumers,
        // so its flow buffer is complete when its backward_fn runs.
        for tensor in order.iter().rev() {
            let node = &tensor.node;
            let Some(backward_fn) = node.backward_fn.as_ref() else {
                continue;
            };
            let Some(grad) = flow.get(&node.id).cloned() else {
                continue;
            };
            let needed: Vec<bool> = node.parents.iter().map(|p| p.requires_grad()).collect();
            let contributions = backward_fn(&grad, &needed);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (parent, contribution) in node.parents.iter().zip(contributions) {
                if let Some(c) = contribution {
                    if parent.requires_grad() {
                        match flow.get_mut(&parent.id()) {
                            Some(buf) => {
                                for (g, v) in buf.iter_mut().zip(&c) {
                                    *g = g.add(*v);
                                }
                            }
                            None => {
                                flow.insert(parent.id(), c);
                            }
                        }
                    }
                }
            }
        }
        for tensor in &order {
            if let Some(g) = flow.get(&tensor.id()) {
                tensor.accumulate_grad(g);
            }
        }
        Ok(())
    }
}

/// Post-order over the gradient-tracking subgraph: ancestors before consumers.
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    enum Visit<T: Scalar> {
        Enter(Tensor<T>),
        Exit(Tensor<T>),
    }
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack = vec![Visit::Enter(root.clone())];
    while let Some(step) = stack.pop() {
        match step {
            Visit::Enter(t) => {
                if !visited.insert(t.id()) {
                    continue;
                }
                stack.push(Visit::Exit(t.clone()));
                for parent in &t.node.parents {
                    if parent.requires_grad() && !visited.contains(&parent.id()) {
                        stack.push(Visit::Enter(parent.clone()));
                    }
                }
            }
            Visit::Exit(t) => order.push(t),
        }
    }
    order
}
