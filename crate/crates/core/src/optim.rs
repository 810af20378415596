//! SGD with heavy-ball momentum.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type NamedGrads = BTreeMap<String, Tensor>;

/// Anything that exposes named, mutable parameter tensors to an optimizer.
pub trait Trainable {
    /// Fails with [`Error::Frozen`] when the parameters must not move.
    fn named_tensors_mut(&mut self) -> Result<Vec<(&str, &mut Tensor)>>;
}

#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f32,
    momentum: f32,
    velocity: BTreeMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(learning_rate: f32, momentum: f32) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "learning rate must be non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidSpec(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    pub fn velocity(&self, name: &str) -> Option<&[f32]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    pub fn state_bytes(&self) -> usize {
        self.velocity.values().map(|v| v.len() * 4).sum()
    }

    /// `v ← μ·v + g; p ← p − lr·v`, then clears `grads`.
    ///
    /// Every parameter must have a gradient of matching shape; nothing is
    /// updated otherwise.
    pub fn step<P: Trainable + ?Sized>(&mut self, params: &mut P, grads: &mut NamedGrads) -> Result<()> {
        let tensors = params.named_tensors_mut()?;
        for (name, tensor) in &tensors {
            match grads.get(*name) {
                None => return Err(Error::MissingGradient(name.to_string())),
                Some(g) if g.shape() != tensor.shape() => {
                    return Err(Error::shape(
                        "sgd_step",
                        format!("`{name}`: grad {:?} vs param {:?}", g.shape(), tensor.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        for (name, tensor) in tensors {
            let g = &grads[name];
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.numel()]);
            for ((p, vel), &gv) in tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vel = self.momentum * *vel + gv;
                *p -= self.learning_rate * *vel;
            }
        }
        grads.clear();
        Ok(())
    }
}
