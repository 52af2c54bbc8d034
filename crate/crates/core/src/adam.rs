//! Bias-corrected Adam.

use crate::mlp::{MlpGrads, MlpParams};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: MlpParams<T>,
    pub v: MlpParams<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &MlpParams<T>, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update in place. Gradients are validated before anything is
/// modified, so a failed step leaves parameters and state untouched.
pub fn adam_step<T: Real>(params: &mut MlpParams<T>, grads: &MlpGrads<T>, state: &mut AdamState<T>) -> Result<()> {
    if params.architecture() != grads.architecture() || params.architecture() != state.m.architecture() {
        return Err(Error::ShapeMismatch("adam: parameter/gradient/state shapes differ".into()));
    }
    for (li, layer) in grads.layers().iter().enumerate() {
        if !layer.weights().iter().chain(layer.bias()).all(|g| g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: li });
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - num_traits::Float::powi(beta1, t);
    let bc2 = 1.0 - num_traits::Float::powi(beta2, t);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let step_size = T::of(lr / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / num_traits::Float::sqrt(bc2));
    let eps = T::of(eps);

    let updates = params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut().zip(state.v.values_mut()));
    for ((p, g), (m, v)) in updates {
        *m = b1 * *m + one_b1 * *g;
        *v = b2 * *v + one_b2 * *g * *g;
        let denom = v.sqrt() * inv_sqrt_bc2 + eps;
        *p -= step_size * *m / denom;
    }
    Ok(())
}
