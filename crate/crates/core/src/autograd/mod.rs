//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to tracked [`Var`]s. Values
//! that do not depend on a tracked leaf are never recorded, so inference
//! through constant parameters keeps no tape and frees intermediates as soon
//! as their `Var` is dropped.

mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    shape: Vec<usize>,
}

/// Tape of recorded operations.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value flowing through a [`Graph`]; cheap to clone.
#[derive(Clone)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(node={:?}, {:?})", self.node, self.value)
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input whose gradient is kept after [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: Vec::new(), backward: None, shape: value.shape().to_vec() });
        Var { graph: self, value, node: Some(nodes.len() - 1) }
    }

    /// An untracked value: gradients never flow into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        Var { graph: self, value, node: None }
    }

    pub(crate) fn record<'g>(
        &'g self,
        value: impl Into<Arc<Tensor<T>>>,
        parents: &[&Var<'g, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    ) -> Var<'g, T> {
        let value = value.into();
        let ids: Vec<Option<usize>> = parents.iter().map(|p| p.node).collect();
        if ids.iter().all(Option::is_none) {
            return Var { graph: self, value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: ids, backward: Some(Box::new(backward)), shape: value.shape().to_vec() });
        Var { graph: self, value, node: Some(nodes.len() - 1) }
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", loss.value.shape())));
        }
        let Some(root) = loss.node else {
            return Ok(Gradients { grads: HashMap::new() });
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.value.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                leaves.insert(id, g);
                continue;
            };
            let want: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let parent_grads = backward(&g, &want)?;
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                let (Some(pid), Some(pg)) = (pid, pg) else { continue };
                if pg.shape() != nodes[*pid].shape.as_slice() {
                    return Err(Error::Internal(format!(
                        "gradient shape {:?} does not match node shape {:?}",
                        pg.shape(),
                        nodes[*pid].shape
                    )));
                }
                match grads[*pid].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[*pid] = Some(pg),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of leaf variables produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.grads.get(&id))
    }

    pub fn take(&mut self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        var.node.and_then(|id| self.grads.remove(&id))
    }

    /// Gradient of `var`, or zeros when it did not influence the loss.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.value.dims4()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Self {
        Self { graph: self.graph, value: Arc::clone(&self.value), node: None }
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> T {
        self.value.data()[0]
    }
}
