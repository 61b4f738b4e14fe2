//! Named parameter storage shared by blocks, models, optimizer and checkpoints.

use std::collections::HashMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered name → tensor map. Insertion order is the canonical inventory
/// order used by checkpoints and the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a parameter. Panics on duplicate names; inventories are built by
    /// code, so a duplicate is a programming error.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(
            self.index.insert(name.clone(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count over all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Sum of element counts of parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Concatenation of all values in inventory order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.numel());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::shape("unflatten", format!("{} values for {} parameters", flat.len(), self.numel())));
        }
        let mut pos = 0;
        for (_, t) in self.entries.iter_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind<'p, 't>(&'p self, tape: &'t Tape<T>, requires_grad: bool) -> Bound<'p, 't, T> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        Bound { set: self, vars }
    }

    /// Binds parameters as slices of one flat variable laid out as
    /// [`ParamSet::flatten`]; gradients then flow to `flat`.
    pub fn bind_flat<'p, 't>(&'p self, flat: Var<'t, T>) -> Result<Bound<'p, 't, T>> {
        if flat.shape() != [self.numel()] {
            return Err(Error::shape("bind_flat", format!("{:?} for {} parameters", flat.shape(), self.numel())));
        }
        let mut pos = 0;
        let mut vars = Vec::with_capacity(self.len());
        for (_, t) in &self.entries {
            vars.push(flat.slice(0, pos, t.len())?.reshape(t.shape().to_vec())?);
            pos += t.len();
        }
        Ok(Bound { set: self, vars })
    }
}

/// A [`ParamSet`] registered on a tape.
pub struct Bound<'p, 't, T: Scalar> {
    set: &'p ParamSet<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'_, 't, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.set
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.vars[0].tape()
    }

    /// Gradients after backward, in inventory order (zeros where unreached).
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| v.tape().grad_or_zeros(*v)).collect()
    }

    /// Gradients flattened in inventory order.
    pub fn flat_grads(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.set.numel());
        for g in self.grads() {
            out.extend_from_slice(g.data());
        }
        out
    }
}
