use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradient contributions returned by a backward rule, one slot per input.
/// `None` means "no contribution" (input is constant or unaffected).
pub type InputGrads<T> = Vec<Option<Vec<T>>>;

pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> InputGrads<T>>;

/// What a backward rule sees: the upstream gradient plus the forward values.
pub struct BackwardCtx<'a, T> {
    pub grad: &'a [T],
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
}

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Single-use recording of one forward pass.
///
/// Nodes are appended in execution order, so the vector is already a
/// topological order. A tape and its [`Var`]s never leave the thread that
/// created them.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends the result of a primitive. The backward rule is dropped when no
    /// input participates in differentiation. Non-finite outputs are rejected.
    ///
    /// Other modules use this to register fused primitives (scan, STFT).
    pub fn record<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        backward: impl Fn(&BackwardCtx<'_, T>) -> InputGrads<T> + 'static,
    ) -> Result<Var<'t, T>> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        for v in inputs {
            debug_assert!(std::ptr::eq(v.tape, self), "var from another tape");
        }
        let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
        nodes.push(Node {
            op,
            value,
            parents: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn backward_from(&self, loss: usize) -> Result<()> {
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss].value.shape().to_vec();
        if nodes[loss].value.len() != 1 {
            self.consumed.set(false);
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss] = Some(vec![T::one()]);
        for id in (0..=loss).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                output: &node.value,
            };
            let contributions = backward(&ctx);
            debug_assert_eq!(contributions.len(), node.parents.len(), "{}", node.op);
            for (&p, contrib) in node.parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(c.len(), nodes[p].value.len(), "grad size in {}", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, if any.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let g = grads.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("gradient shape"))
    }

    /// Like [`Tape::grad`] but yields zeros for leaves the loss does not reach.
    pub fn grad_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrowed view of the recorded value.
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    /// Runs reverse accumulation from this scalar. The tape cannot be
    /// replayed afterwards.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.tape.nodes.borrow();
        write!(f, "Var#{}({}, {:?})", self.id, nodes[self.id].op, nodes[self.id].value.shape())
    }
}
