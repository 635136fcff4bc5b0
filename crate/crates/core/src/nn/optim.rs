use crate::error::{Error, Result};
use crate::nn::params::{LayerGrads, ParamSet};
use crate::tensor::{Elem, Tensor};
use std::collections::BTreeMap;

/// SGD with classical momentum:  v ← momentum·v + g;  p ← p − lr·v.
///
/// Velocity buffers are created lazily per parameter name.  A step is
/// all-or-nothing: if any gradient contains a non-finite value the step is
/// rejected before any parameter or velocity is touched.
#[derive(Clone, Debug, Default)]
pub struct SgdOptimizer<E: Elem = f32> {
    velocity: BTreeMap<String, Tensor<E>>,
}

impl<E: Elem> SgdOptimizer<E> {
    pub fn new() -> Self {
        SgdOptimizer {
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamSet<E>,
        grads: &LayerGrads<E>,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        for (name, g) in &grads.params {
            if !g.data().iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient for parameter {name:?}; step rejected"
                )));
            }
            if !params.contains(name) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for unknown parameter {name:?}"
                )));
            }
        }
        let lr = E::from_f64(lr);
        let momentum = E::from_f64(momentum);
        for (name, g) in &grads.params {
            let p = params.get_mut(name);
            assert_eq!(p.shape(), g.shape(), "sgd_step shape for {name:?}");
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = momentum * *vi + gi;
            }
            p.add_scaled(v, -lr);
        }
        Ok(())
    }
}
