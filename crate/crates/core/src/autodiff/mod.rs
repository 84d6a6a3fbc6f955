//! Reverse-mode automatic differentiation over 4D `(batch, channel, height,
//! width)` arrays.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tensor`] is a
//! cheap handle into it. Node ids grow monotonically, so reverse id order is
//! a valid topological order for the backward pass.

mod conv;
mod norm;
mod param;
mod pointwise;
mod ptmw;
mod resample;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

pub use param::{adam_step, decay_lr, AdamConfig, ModelParams, Parameter};
pub use ptmw::{read_params, write_params, PTMW_MAGIC, PTMW_VERSION};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Shape = [usize; 4];

pub(crate) fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

enum Op<S> {
    Leaf,
    Conv2d(conv::Saved<S>),
    GroupNorm(norm::Saved<S>),
    Gelu { input: usize },
    Relu { input: usize },
    Affine { input: usize, scale: S },
    Add { a: usize, b: usize },
    Concat { a: usize, b: usize },
    AvgPool2 { input: usize },
    BilinearUp2 { input: usize },
    ReflectPad { input: usize, top: usize, left: usize },
    Crop { input: usize, top: usize, left: usize },
    Sum { input: usize },
    WeightedL1 { pred: usize, target: Rc<Vec<S>>, weights: Rc<Vec<S>> },
}

struct Node<S> {
    shape: Shape,
    value: Rc<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Records the operations of one forward pass.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    grads: RefCell<Vec<Option<Vec<S>>>>,
    nan_guard: bool,
    first_non_finite: Cell<Option<usize>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> fmt::Debug for Tensor<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<S: Scalar> Tape<S> {
    /// NaN guard follows `debug_assertions`.
    pub fn new() -> Self {
        Self::with_nan_guard(cfg!(debug_assertions))
    }

    /// With the guard on, the first node whose value or gradient is not
    /// finite is remembered and reported by [`Tape::check_finite`].
    pub fn with_nan_guard(nan_guard: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            nan_guard,
            first_non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            None => Ok(()),
            Some(id) => Err(Error::Shape(format!("non-finite value or gradient at tape node {id}"))),
        }
    }

    fn guard(&self, id: usize, values: &[S]) {
        if self.nan_guard && self.first_non_finite.get().is_none() && values.iter().any(|v| !v.is_finite()) {
            self.first_non_finite.set(Some(id));
        }
    }

    fn push(&self, shape: Shape, value: Vec<S>, requires_grad: bool, op: Op<S>) -> Tensor<'_, S> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        self.guard(id, &value);
        nodes.push(Node { shape, value: Rc::new(value), requires_grad, op });
        self.grads.borrow_mut().push(None);
        Tensor { tape: self, id }
    }

    /// A leaf holding `value`.
    pub fn leaf(&self, shape: Shape, value: Vec<S>, requires_grad: bool) -> Result<Tensor<'_, S>> {
        if numel(&shape) != value.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {} values, got {}", numel(&shape), value.len())));
        }
        Ok(self.push(shape, value, requires_grad, Op::Leaf))
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, shape: Shape, value: Vec<S>) -> Result<Tensor<'_, S>> {
        self.leaf(shape, value, false)
    }

    fn shape_of(&self, id: usize) -> Shape {
        self.nodes.borrow()[id].shape
    }

    fn value_of(&self, id: usize) -> Rc<Vec<S>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a single-element tensor, adding into the stored
    /// gradients of every reachable node that requires one. Calling it twice
    /// accumulates twice.
    pub fn backward(&self, loss: Tensor<'_, S>) -> Result<()> {
        assert!(std::ptr::eq(loss.tape, self), "tensor belongs to a different tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if numel(&root.shape) != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got shape {:?}", root.shape)));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut buf = GradBuf { slots: (0..=loss.id).map(|_| None).collect() };
        buf.slots[loss.id] = Some(vec![S::one()]);
        let mut grads = self.grads.borrow_mut();
        for id in (0..=loss.id).rev() {
            let Some(g) = buf.slots[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.guard(id, &g);
            backprop(node, &g, &nodes, &mut buf);
            match &mut grads[id] {
                Some(stored) => stored.iter_mut().zip(&g).for_each(|(s, v)| *s += *v),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Clears all stored gradients.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

/// Per-node gradient accumulators for one backward pass.
struct GradBuf<S> {
    slots: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> GradBuf<S> {
    /// Accumulator of `id`, or `None` when that node takes no gradient.
    fn slot(&mut self, id: usize, nodes: &[Node<S>]) -> Option<&mut Vec<S>> {
        let node = &nodes[id];
        if !node.requires_grad {
            return None;
        }
        Some(self.slots[id].get_or_insert_with(|| vec![S::zero(); node.value.len()]))
    }
}

fn backprop<S: Scalar>(node: &Node<S>, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d(saved) => conv::backward(saved, node.shape, g, nodes, buf),
        Op::GroupNorm(saved) => norm::backward(saved, g, nodes, buf),
        Op::Gelu { input } => pointwise::gelu_backward(*input, g, nodes, buf),
        Op::Relu { input } => pointwise::relu_backward(*input, g, nodes, buf),
        Op::Affine { input, scale } => {
            if let Some(dx) = buf.slot(*input, nodes) {
                dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *scale);
            }
        }
        Op::Add { a, b } => {
            for p in [*a, *b] {
                if let Some(dx) = buf.slot(p, nodes) {
                    dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
        }
        Op::Concat { a, b } => pointwise::concat_backward(*a, *b, g, nodes, buf),
        Op::AvgPool2 { input } => resample::avg_pool2_backward(*input, g, nodes, buf),
        Op::BilinearUp2 { input } => resample::bilinear_up2_backward(*input, g, nodes, buf),
        Op::ReflectPad { input, top, left } => resample::reflect_pad_backward(*input, *top, *left, node.shape, g, nodes, buf),
        Op::Crop { input, top, left } => resample::crop_backward(*input, *top, *left, node.shape, g, nodes, buf),
        Op::Sum { input } => {
            if let Some(dx) = buf.slot(*input, nodes) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::WeightedL1 { pred, target, weights } => {
            pointwise::weighted_l1_backward(*pred, target, weights, g[0], nodes, buf)
        }
    }
}

impl<'t, S: Scalar> Tensor<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape())
    }

    pub fn value(&self) -> Rc<Vec<S>> {
        self.tape.value_of(self.id)
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.value().as_ref().clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> S {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.tape.grads.borrow()[self.id].clone()
    }

    fn same_tape(&self, other: &Tensor<'t, S>) {
        assert!(std::ptr::eq(self.tape, other.tape), "tensors belong to different tapes");
    }

    fn unary(&self, shape: Shape, value: Vec<S>, op: Op<S>) -> Tensor<'t, S> {
        self.tape.push(shape, value, self.requires_grad(), op)
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor<'t, S> {
        let tape = self.tape;
        let mut nodes = tape.nodes.borrow_mut();
        let id = nodes.len();
        let (shape, value) = (nodes[self.id].shape, nodes[self.id].value.clone());
        nodes.push(Node { shape, value, requires_grad: false, op: Op::Leaf });
        tape.grads.borrow_mut().push(None);
        Tensor { tape, id }
    }

    /// `scale * x + offset`, elementwise.
    pub fn affine(&self, scale: S, offset: S) -> Tensor<'t, S> {
        let value = self.value().iter().map(|&v| v * scale + offset).collect();
        self.unary(self.shape(), value, Op::Affine { input: self.id, scale })
    }

    pub fn add(&self, other: &Tensor<'t, S>) -> Result<Tensor<'t, S>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(Error::Shape(format!("add of {sa:?} and {sb:?}")));
        }
        let value = self.value().iter().zip(other.value().iter()).map(|(&a, &b)| a + b).collect();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(sa, value, rg, Op::Add { a: self.id, b: other.id }))
    }

    /// Sum of all elements as a `1x1x1x1` tensor.
    pub fn sum(&self) -> Tensor<'t, S> {
        let total = self.value().iter().copied().sum();
        self.unary([1, 1, 1, 1], vec![total], Op::Sum { input: self.id })
    }
}

#[cfg(test)]
mod tests;
