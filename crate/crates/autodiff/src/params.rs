use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Copy of the listed parameters, for before/after comparisons.
    pub fn snapshot(&self, ids: &[ParamId]) -> Vec<Tensor<T>> {
        ids.iter().map(|&id| self.values[id.0].clone()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|v| v.cast()).collect() }
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }
}

/// Per-parameter gradients collected from one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    map: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor<T>) {
        self.map.insert(id, g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.map.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().flat_map(|g| g.data()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }
}

/// A tape bound to a parameter store. Parameters become leaves lazily, once
/// per graph, and only the `trainable` ones are differentiated.
pub struct Graph<'s, T> {
    pub tape: Tape<T>,
    store: &'s ParamStore<T>,
    trainable: Vec<bool>,
    bound: Vec<Option<Var>>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>, trainable: &[ParamId]) -> Self {
        let mut flags = vec![false; store.len()];
        for id in trainable {
            flags[id.0] = true;
        }
        Graph { tape: Tape::new(), store, trainable: flags, bound: vec![None; store.len()] }
    }

    /// Graph with no trainable parameters; nothing is recorded for backward.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Graph::new(store, &[])
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.trainable[id.0]);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Backward from `loss`, returning gradients for every trainable parameter
    /// that was used. A trainable parameter that never entered the graph gets
    /// no entry.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let grads = self.tape.backward(loss)?;
        let mut out = Gradients::new();
        for (i, slot) in self.bound.iter().enumerate() {
            if !self.trainable[i] {
                continue;
            }
            if let Some(v) = slot {
                let g = grads.tensor(*v).unwrap_or_else(|| Tensor::zeros(self.store.get(ParamId(i)).shape()));
                out.insert(ParamId(i), g);
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_grad_shape<T: Scalar>(name: &str, p: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(TensorError::GradientShape {
            name: name.to_string(),
            got: g.shape().to_vec(),
            want: p.shape().to_vec(),
        });
    }
    Ok(())
}
