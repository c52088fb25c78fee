//! Parameter storage and the small set of trainable building blocks shared by
//! every network.

mod conv;
mod optim;
mod spectral;

use std::cell::RefCell;
use std::sync::Arc;

pub use conv::{Conv2d, Init};
pub use optim::{Adam, AdamConfig};
pub use spectral::{spectral_normalized, SpectralState};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.values.iter().map(|v| (**v).clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces every tensor with the same-named entry of `other`.
    pub fn load_from(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<()> {
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let t = lookup(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = Arc::new(t);
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|v| Arc::new(v.cast())).collect() }
    }

    /// Binds the parameters into `graph`. Trainable bindings create tracked
    /// leaves; frozen ones create constants that gradients skip.
    pub fn bind<'g, 's>(&'s self, graph: &'g Graph<T>, trainable: bool) -> Bound<'g, 's, T> {
        Bound { graph, store: self, vars: RefCell::new(vec![None; self.values.len()]), trainable }
    }
}

/// Parameters of one [`ParamStore`] materialised in a [`Graph`].
///
/// [`ParamStore::bind`] creates the variables lazily; [`Bound::from_vars`]
/// substitutes caller-owned ones, e.g. leaves of a gradient probe.
pub struct Bound<'g, 's, T: Float> {
    graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    vars: RefCell<Vec<Option<Var<'g, T>>>>,
    trainable: bool,
}

impl<'g, 's, T: Float> Bound<'g, 's, T> {
    pub fn from_vars(store: &'s ParamStore<T>, vars: Vec<Var<'g, T>>) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::invalid(format!("{} variables for {} parameters", vars.len(), store.len())));
        }
        let graph = vars.first().map(|v| v.graph()).ok_or_else(|| Error::invalid("empty parameter set"))?;
        for (v, t) in vars.iter().zip(&store.values) {
            if v.shape() != t.shape() {
                return Err(Error::Shape(format!("variable {:?} for parameter {:?}", v.shape(), t.shape())));
            }
        }
        let trainable = vars.iter().any(Var::is_tracked);
        Ok(Self { graph, store, vars: RefCell::new(vars.into_iter().map(Some).collect()), trainable })
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn get(&self, id: ParamId) -> Var<'g, T> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0]
            .get_or_insert_with(|| {
                let value = Arc::clone(&self.store.values[id.0]);
                if self.trainable {
                    self.graph.leaf_shared(value)
                } else {
                    self.graph.constant_shared(value)
                }
            })
            .clone()
    }

    /// One gradient per parameter, zeros for parameters the loss never saw.
    pub fn grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        let vars = self.vars.borrow();
        self.store
            .values
            .iter()
            .zip(vars.iter())
            .map(|(v, var)| match var.as_ref().and_then(|var| grads.get(var)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(v.shape().to_vec()),
            })
            .collect()
    }
}
