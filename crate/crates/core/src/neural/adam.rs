use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>, lr: T) -> Self {
        let shape: Vec<Vec<T>> = params
            .layers
            .iter()
            .flat_map(|l| [vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]])
            .collect();
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: shape.clone(),
            v: shape,
        }
    }

    /// One bias-corrected Adam step. A non-finite gradient leaves everything
    /// untouched and returns `Ok(false)`.
    pub fn update(&mut self, params: &mut MlpParams<T>, grads: &Gradients<T>) -> Result<bool> {
        if grads.weights.len() != params.layers.len() || self.m.len() != 2 * params.layers.len() {
            return Err(Error::Shape("optimizer state does not match network".into()));
        }
        if !grads.is_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step + 1);
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (k, layer) in params.layers.iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &grads.weights[k], 2 * k),
                (&mut layer.bias, &grads.bias[k], 2 * k + 1),
            ];
            for (p, g, slot) in pairs {
                if p.len() != g.len() {
                    return Err(Error::Shape("gradient does not match parameter".into()));
                }
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                    v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(true)
    }
}
