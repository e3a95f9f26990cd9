//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, GradError, Result};
use crate::params::{Grads, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has an entry in `grads`.
    ///
    /// Gradients are validated before any parameter is touched, so a
    /// non-finite gradient leaves both parameters and state unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        for (name, g) in grads {
            let p = params.value(name)?;
            if p.shape() != g.shape() {
                return dim_err(
                    "adam",
                    format!("`{name}`: param {:?} vs grad {:?}", p.shape(), g.shape()),
                );
            }
            if let Some(m) = self.moments.get(name) {
                if m.m.shape() != p.shape() {
                    return dim_err("adam", format!("`{name}`: state shape {:?}", m.m.shape()));
                }
            }
            if !g.is_finite() {
                return Err(GradError::NonFiniteGradient { param: name.clone() });
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (name, g) in grads {
            let p = params.value_mut(name)?;
            let state = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            });
            let m = state.m.data_mut();
            let v = state.v.data_mut();
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
