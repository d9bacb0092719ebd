use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr_encoder: f64,
    pub lr_fusion: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            lr_encoder: 1e-5,
            lr_fusion: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            patience: 5,
            max_epochs: 100,
            grad_clip: Some(5.0),
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.lr_encoder > 0.0) || !(self.lr_fusion > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail(format!("betas must lie in [0,1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return fail("batch_size, patience and max_epochs must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::Fusion => self.lr_fusion,
        }
    }
}

/// One bias-corrected Adam update in place. `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
) {
    assert!(t >= 1, "Adam step counter starts at 1");
    assert!(param.len() == grad.len() && grad.len() == m.len() && m.len() == v.len());
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i].as_f64();
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = T::of(param[i].as_f64() - lr * m_hat / (v_hat.sqrt() + epsilon));
    }
}

/// Adam moments for every tensor of a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let zeros = || store.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update with per-group learning rates.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>], spec: &OptimizerSpec) {
        self.t += 1;
        for (k, e) in store.entries_mut().iter_mut().enumerate() {
            adam_step(
                e.value.data_mut(),
                &grads[k],
                &mut self.m[k],
                &mut self.v[k],
                spec.lr(e.group),
                spec.beta1,
                spec.beta2,
                spec.epsilon,
                self.t,
            );
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_first_step() {
        let (mut w, mut m, mut v) = ([0.0f64], [0.0], [0.0]);
        adam_step(&mut w, &[1.0], &mut m, &mut v, 1e-3, 0.9, 0.999, 1e-8, 1);
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        assert_eq!(w[0], -1e-3 / (1.0 + 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut w, mut m, mut v) = ([0.25f32, -3.0], [0.0; 2], [0.0; 2]);
        for t in 1..=3 {
            adam_step(&mut w, &[0.0, 0.0], &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, t);
        }
        assert_eq!(w, [0.25, -3.0]);
    }

    #[test]
    fn clipping_scales_to_ceiling() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
        let mut g = vec![vec![0.3f64]];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g[0][0], 0.3);
    }
}
