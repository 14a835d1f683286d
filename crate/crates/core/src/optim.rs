//! Adam optimizer with optional decoupled weight decay.
//!
//! Moment buffers are stored per parameter id and serialized with
//! checkpoints so an interrupted run resumes bit-for-bit.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied directly to weights (0 disables).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    /// Update count; bias correction uses t starting at 1.
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let m = params.ids().map(|id| Array2::zeros(params.get(id).dim())).collect();
        let v = params.ids().map(|id| Array2::zeros(params.get(id).dim())).collect();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from accumulated gradients. `grads[i]` pairs a
    /// parameter id with its gradient; ids absent from the list are left
    /// untouched (their moments do not advance either, matching sparse
    /// update semantics). Frozen parameters are skipped.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(ParamId, Array2<f64>)]) {
        self.step += 1;
        let t = self.step as f64;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);

        for (pid, grad) in grads {
            if params.is_frozen(*pid) {
                continue;
            }
            let i = pid.0;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            assert_eq!(m.dim(), grad.dim(), "gradient shape mismatch for {}", params.name(*pid));

            m.zip_mut_with(grad, |m, g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            v.zip_mut_with(grad, |v, g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);

            let w = params.get_mut(*pid);
            if c.weight_decay > 0.0 {
                w.mapv_inplace(|x| x * (1.0 - c.lr * c.weight_decay));
            }
            ndarray::Zip::from(w)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                });
        }
    }
}
