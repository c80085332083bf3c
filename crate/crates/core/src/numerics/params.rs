use std::collections::BTreeMap;

use super::{NumericsError, Scalar, Tape, Tensor, Var};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub(crate) fn from_map(tensors: BTreeMap<String, Tensor<S>>) -> Self {
        Self { tensors }
    }

    /// Inserts or replaces a tensor.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Puts every tensor on `tape` as a named leaf.
    pub fn register<'t>(&self, tape: &'t Tape<S>) -> ParamVars<'t, S> {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(k, v.clone())))
                .collect(),
        }
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_same_layout(&self, other: &Self) -> Result<(), NumericsError> {
        for (name, t) in &self.tensors {
            let o = other
                .get(name)
                .ok_or_else(|| NumericsError::MissingParam { name: name.clone() })?;
            if o.shape() != t.shape() {
                return Err(NumericsError::Dimension {
                    op: "param layout",
                    left: t.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = other.names().find(|n| !self.tensors.contains_key(*n)) {
            return Err(NumericsError::MissingParam { name: extra.clone() });
        }
        Ok(())
    }
}

/// Tape handles for every entry of a [`ParamStore`].
pub struct ParamVars<'t, S> {
    vars: BTreeMap<String, Var<'t, S>>,
}

impl<'t, S: Scalar> ParamVars<'t, S> {
    pub fn get(&self, name: &str) -> Result<Var<'t, S>, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::MissingParam { name: name.to_string() })
    }
}
