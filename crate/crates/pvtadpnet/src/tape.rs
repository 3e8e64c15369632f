//! Reverse-mode autodiff over a recorded computation tape.
//!
//! Every forward op appends a node holding its output value, parent ids,
//! and a backward closure mapping the upstream gradient to per-parent
//! gradients. Nodes are appended in topological order by construction, so
//! a single reverse sweep visits each node exactly once.

use std::cell::Cell;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Elem;
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a tape.
pub type TensorId = usize;

/// Backward closure: (upstream grad, parent values, output value) -> parent grads.
pub(crate) type BackFn<E> =
    Box<dyn Fn(&Tensor<E>, &[&Tensor<E>], &Tensor<E>) -> Vec<Tensor<E>>>;

pub(crate) struct Node<E: Elem> {
    pub value: Tensor<E>,
    pub parents: Vec<TensorId>,
    pub backward: Option<BackFn<E>>,
    pub needs_grad: bool,
    pub param: Option<ParamId>,
}

pub struct Tape<E: Elem> {
    pub(crate) nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
    grad_enabled: bool,
    flops: Cell<u64>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            flops: Cell::new(0),
        }
    }

    /// A tape that records values only; backward closures are dropped.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Running FLOP tally of every op recorded on this tape.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub(crate) fn count_flops(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id].value.shape
    }

    /// Records an input leaf. `requires_grad` makes its gradient retrievable
    /// via [`Tape::grad`] after backward.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> TensorId {
        self.push_leaf(value, requires_grad && self.grad_enabled, None)
    }

    /// Records a constant that never receives gradient.
    pub fn constant(&mut self, value: Tensor<E>) -> TensorId {
        self.push_leaf(value, false, None)
    }

    /// Records a leaf bound to a named parameter; its gradient is routed
    /// into the store by [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> TensorId {
        self.push_leaf(store.value(id).clone(), self.grad_enabled, Some(id))
    }

    fn push_leaf(
        &mut self,
        value: Tensor<E>,
        needs_grad: bool,
        param: Option<ParamId>,
    ) -> TensorId {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            needs_grad,
            param,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    /// Records an op node. The backward closure is kept only when some
    /// parent needs gradient and this tape has gradients enabled.
    pub(crate) fn push_op(
        &mut self,
        value: Tensor<E>,
        parents: Vec<TensorId>,
        backward: BackFn<E>,
    ) -> TensorId {
        let needs_grad =
            self.grad_enabled && parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            backward: if needs_grad { Some(backward) } else { None },
            needs_grad,
            param: None,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    /// Runs the reverse sweep from a scalar loss. Gradients accumulate
    /// across repeated calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(
            self.nodes[loss].value.numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.nodes[loss].value.shape
        );
        assert!(
            self.nodes[loss].needs_grad,
            "backward on a detached tensor (no grad path to any input)"
        );
        let mut local: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        local[loss] = Some(Tensor::ones(&self.nodes[loss].value.shape));

        for idx in (0..=loss).rev() {
            let Some(gout) = local[idx].take() else { continue };
            if let Some(back) = &self.nodes[idx].backward {
                let node = &self.nodes[idx];
                let parent_vals: Vec<&Tensor<E>> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let parent_grads = back(&gout, &parent_vals, &node.value);
                assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    if !self.nodes[p].needs_grad {
                        continue;
                    }
                    match &mut local[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
            // leaves keep their accumulated gradient
            if self.nodes[idx].parents.is_empty() && self.nodes[idx].needs_grad {
                match &mut self.grads[idx] {
                    Some(acc) => acc.add_assign(&gout),
                    slot => *slot = Some(gout),
                }
            }
        }
    }

    /// Gradient of the last backward sweep(s) w.r.t. a leaf.
    pub fn grad(&self, id: TensorId) -> Option<&Tensor<E>> {
        self.grads[id].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Adds every param-bound leaf gradient into the store's grad buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<E>) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, self.grads[idx].as_ref()) {
                store.grad_mut(pid).add_assign(g);
            }
        }
    }
}
