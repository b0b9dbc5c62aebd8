//! AdamW with decoupled weight decay and bias correction.

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    first_moment: ParamSet,
    second_moment: ParamSet,
    step_count: u64,
}

impl AdamWState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &ParamSet {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &ParamSet {
        &self.second_moment
    }

    /// One in-place update of `params` with `grads`.
    ///
    /// The gradient is checked for non-finite entries before anything is
    /// touched, so a failed step leaves parameters and moments unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&self.first_moment)?;
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite {
                name: name.to_string(),
            });
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
        for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *pi *= decay;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: returns updated parameters and state.
pub fn adamw_step(
    params: &ParamSet,
    grads: &ParamSet,
    state: &AdamWState,
) -> Result<(ParamSet, AdamWState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}
