use crate::tensor::{Elem, Tensor};
use std::collections::BTreeMap;

/// Named model parameters.  A `BTreeMap` keeps iteration order stable, which
/// makes weight files and optimizer updates deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<E: Elem = f32> {
    map: BTreeMap<String, Tensor<E>>,
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<E>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    /// Fetch by name; panics if absent (parameter names are static strings
    /// wired by the model builders, so a miss is a bug).
    pub fn get(&self, name: &str) -> &Tensor<E> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<E> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<E>> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.map.iter_mut()
    }

    pub fn cast<F: Elem>(&self) -> ParamSet<F> {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<F>()))
                .collect(),
        }
    }
}

/// Gradients produced by a backward pass: one tensor per parameter name plus
/// the gradient with respect to the layer's (or model's) input.
#[derive(Clone, Debug)]
pub struct LayerGrads<E: Elem = f32> {
    pub params: BTreeMap<String, Tensor<E>>,
    pub input: Tensor<E>,
}

impl<E: Elem> LayerGrads<E> {
    pub fn new(input_shape: &[usize]) -> Self {
        LayerGrads {
            params: BTreeMap::new(),
            input: Tensor::zeros(input_shape),
        }
    }

    /// Accumulate a parameter gradient (adds if the name already has one).
    pub fn add(&mut self, name: impl Into<String>, grad: Tensor<E>) {
        let name = name.into();
        match self.map_entry(&name) {
            Some(existing) => existing.add_scaled(&grad, E::one()),
            None => {
                self.params.insert(name, grad);
            }
        }
    }

    fn map_entry(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.params.get_mut(name)
    }

    pub fn get(&self, name: &str) -> &Tensor<E> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing gradient for {name:?}"))
    }

    /// Merge all parameter grads from `other` into self (input grad ignored).
    pub fn merge(&mut self, other: LayerGrads<E>) {
        for (name, g) in other.params {
            self.add(name, g);
        }
    }
}
