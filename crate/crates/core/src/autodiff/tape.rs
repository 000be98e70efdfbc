//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and an optional
//! pullback. Parents always have smaller node ids than their children, so a
//! reverse sweep over ids is a valid reverse topological order.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::autodiff::params::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Propagates an output gradient into the gradient slots of the parents.
pub type Pullback<S> = Box<dyn Fn(&[S], &mut GradSink<S>)>;

struct Node<S> {
    shape: Vec<usize>,
    value: Rc<Vec<S>>,
    pullback: Option<Pullback<S>>,
}

/// Gradient accumulators handed to pullbacks during the reverse sweep.
pub struct GradSink<S> {
    grads: Vec<Option<Vec<S>>>,
    sizes: Vec<usize>,
}

impl<S: Scalar> GradSink<S> {
    /// Mutable gradient slot of node `id`, zero-initialised on first touch.
    pub fn slot(&mut self, id: usize) -> &mut [S] {
        let n = self.sizes[id];
        self.grads[id].get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn accumulate(&mut self, id: usize, g: &[S]) {
        for (d, &s) in self.slot(id).iter_mut().zip(g) {
            *d += s;
        }
    }
}

pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
    bound: RefCell<HashMap<usize, usize>>,
    consumed: Cell<bool>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S> fmt::Debug for Tape<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, S> {
    pub(crate) tape: &'t Tape<S>,
    pub(crate) id: usize,
}

impl<S> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<S> Copy for Var<'_, S> {}

impl<S> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a node. `pullback` receives the node's output gradient.
    pub fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<S>,
        pullback: Option<Pullback<S>>,
    ) -> Var<'_, S> {
        self.push_rc(shape, Rc::new(value), pullback)
    }

    pub(crate) fn push_rc(
        &self,
        shape: Vec<usize>,
        value: Rc<Vec<S>>,
        pullback: Option<Pullback<S>>,
    ) -> Var<'_, S> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            pullback,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf. Gradients are available through [`Gradients::get`].
    pub fn input(&self, t: Tensor<S>) -> Var<'_, S> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), None)
    }

    /// A leaf used as a constant. Identical to [`Tape::input`] except in intent.
    pub fn constant(&self, t: Tensor<S>) -> Var<'_, S> {
        self.input(t)
    }

    pub fn scalar(&self, v: S) -> Var<'_, S> {
        self.push(vec![], vec![v], None)
    }

    /// Binds a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&self, params: &ParamSet<S>, id: ParamId) -> Var<'_, S> {
        if let Some(&node) = self.bound.borrow().get(&id.index()) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let v = self.input(params.get(id).tensor.clone());
        self.bound.borrow_mut().insert(id.index(), v.id);
        v
    }

    /// Runs the reverse sweep from a scalar `loss`. A tape supports exactly
    /// one backward pass; a second call fails with [`Error::TapeConsumed`].
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let (sizes, shapes): (Vec<usize>, Vec<Vec<usize>>) = {
            let nodes = self.nodes.borrow();
            let loss_node = &nodes[loss.id];
            if loss_node.value.len() != 1 {
                return Err(Error::NonScalarLoss(loss_node.shape.clone()));
            }
            if !loss_node.value[0].is_finite() {
                return Err(Error::NonFinite("loss"));
            }
            nodes
                .iter()
                .map(|n| (n.value.len(), n.shape.clone()))
                .unzip()
        };
        self.consumed.set(true);

        let mut sink = GradSink {
            grads: vec![None; sizes.len()],
            sizes,
        };
        sink.grads[loss.id] = Some(vec![S::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = sink.grads[id].take() else {
                continue;
            };
            let pb = self.nodes.borrow_mut()[id].pullback.take();
            if let Some(pb) = pb {
                pb(&g, &mut sink);
            }
            sink.grads[id] = Some(g);
        }
        Ok(Gradients {
            grads: sink.grads,
            shapes,
            bound: self.bound.borrow().clone(),
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Vec<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
    bound: HashMap<usize, usize>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// contribute.
    pub fn get(&self, v: Var<'_, S>) -> Tensor<S> {
        self.node(v.id)
    }

    fn node(&self, id: usize) -> Tensor<S> {
        let shape = &self.shapes[id];
        match &self.grads[id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// One gradient tensor per parameter in `params`, in declaration order.
    /// Parameters that were never bound get zeros.
    pub fn param_grads(&self, params: &ParamSet<S>) -> Vec<Tensor<S>> {
        params
            .iter()
            .map(|(id, p)| match self.bound.get(&id.index()) {
                Some(&node) => self.node(node),
                None => Tensor::zeros(p.tensor.shape()),
            })
            .collect()
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn value(&self) -> Rc<Vec<S>> {
        self.tape.value_of(self.id)
    }

    pub fn tensor(&self) -> Tensor<S> {
        Tensor::new(self.shape(), self.value().as_ref().clone()).expect("node shape")
    }

    /// Value of a single-element node.
    pub fn item(&self) -> S {
        self.value()[0]
    }
}
