use std::cell::{Cell, RefCell};
use std::fmt;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Maps the upstream gradient of a node to one gradient per parent, in parent
/// order. Runs at most once.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// A dynamic computation tape.
///
/// Node ids are handed out in creation order, which is a topological order of
/// the recorded DAG; [`Graph::backward`] walks ids from the loss downwards.
/// A graph is single-use: after one backward pass its closures are consumed
/// and a second call fails.
pub struct Graph<T: Scalar = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Graph`].
pub struct Var<'g, T: Scalar = f64> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        write!(f, "Var#{}({}, {:?})", self.id, node.op, node.value.shape())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Records a tensor that receives a gradient.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert("leaf", value, Vec::new(), true, None)
    }

    /// Records a tensor that does not receive a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert("constant", value, Vec::new(), false, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var<'_, T>) -> Tensor<T> {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// `None` before backward, for constants, and for values the loss does
    /// not depend on.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.borrow().get(v.id).cloned().flatten()
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        if !std::ptr::eq(loss.graph, self) {
            return Err(Error::Graph("loss belongs to a different graph".into()));
        }
        if self.consumed.get() {
            return Err(Error::Graph(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        }
        for id in (0..=loss.id).rev() {
            let Some(upstream) = grads[id].clone() else {
                continue;
            };
            let node = &mut nodes[id];
            let Some(backward) = node.backward.take() else {
                continue;
            };
            let parents = node.parents.clone();
            let parent_grads = backward(&upstream);
            debug_assert_eq!(parent_grads.len(), parents.len(), "op {}", node.op);
            for (pid, pg) in parents.into_iter().zip(parent_grads) {
                if !nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                match &mut grads[pid] {
                    Some(acc) => {
                        for (a, g) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *g;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        // Remaining closures hold saved activations that are no longer needed.
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    fn insert(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value,
            parents,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var { graph: self, id }
    }

    /// Records the result of an op. Fails if the value is not finite.
    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::numeric(op, "produced a non-finite value"));
        }
        if self.consumed.get() {
            return Err(Error::Graph(
                "cannot record new ops after backward; start a new graph".into(),
            ));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        Ok(self.insert(op, value, ids, requires_grad, Some(backward)))
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn value(&self) -> Tensor<T> {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub(crate) fn same_graph(&self, other: &Var<'_, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Graph(format!("{op}: operands live on different graphs")))
        }
    }
}
