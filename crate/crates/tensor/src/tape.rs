//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Var`] carries its value and, when it depends on a tracked leaf, a node
//! on a [`Tape`]. Ops whose inputs are all untracked record nothing, so the
//! same forward code runs as an inference pass when parameters are constants.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::{Result, Tensor, TensorError};

/// Computes input gradients from the output gradient. `needs[i]` is false for
/// inputs that are not tracked; their slot may be returned as `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Shared handle to a recording of differentiable operations.
#[derive(Clone, Default)]
pub struct Tape(Rc<RefCell<TapeInner>>);

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor>) -> Var {
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            value,
            node: Some((self.clone(), id)),
        }
    }

    fn push(&self, node: Node) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Back-propagates from `root`, seeding its gradient with ones.
    ///
    /// Only leaf gradients are retained in the result.
    pub fn backward(&self, root: &Var) -> Result<Gradients> {
        let root_id = match &root.node {
            Some((tape, id)) if tape.same(self) => *id,
            _ => return Err(TensorError::Untracked),
        };
        let inner = self.0.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; inner.nodes.len()];
        grads[root_id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=root_id).rev() {
            let node = &inner.nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let parent_grads = backward(&grad, &needs);
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let (Some(pid), Some(g)) = (parent, g) else {
                    continue;
                };
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.node
            .as_ref()
            .and_then(|(_, id)| self.grads.get(*id))
            .and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the root.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// A value in a differentiable computation.
#[derive(Clone)]
pub struct Var {
    value: Arc<Tensor>,
    node: Option<(Tape, usize)>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("node", &self.node.as_ref().map(|(_, id)| *id))
            .finish()
    }
}

impl Var {
    /// An untracked value; gradients never flow into it.
    pub fn constant(value: Tensor) -> Self {
        Self {
            value: Arc::new(value),
            node: None,
        }
    }

    pub fn constant_shared(value: Arc<Tensor>) -> Self {
        Self { value, node: None }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Tensor> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        self.value.dims4()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Same value, detached from any tape.
    pub fn detach(&self) -> Var {
        Var::constant_shared(Arc::clone(&self.value))
    }

    /// Records an op producing `value` from `inputs`. When no input is tracked
    /// the backward closure is dropped and the result is a constant.
    pub fn from_op<F>(value: Tensor, inputs: &[&Var], backward: F) -> Var
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let tape = inputs.iter().find_map(|v| v.tape()).cloned();
        let Some(tape) = tape else {
            return Var::constant(value);
        };
        let parents = inputs
            .iter()
            .map(|v| match &v.node {
                Some((t, id)) => {
                    debug_assert!(t.same(&tape), "inputs recorded on different tapes");
                    Some(*id)
                }
                None => None,
            })
            .collect();
        let id = tape.push(Node {
            parents,
            backward: Some(Box::new(backward)),
        });
        Var {
            value: Arc::new(value),
            node: Some((tape, id)),
        }
    }
}
