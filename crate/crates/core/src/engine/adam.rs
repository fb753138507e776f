use std::collections::BTreeMap;

use super::{Gradients, ParamMap, Scalar};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single coordinate at step `t >= 1`.
/// Returns the new parameter value.
pub fn adam_update(theta: f64, m: &mut f64, v: &mut f64, g: f64, t: u64, cfg: &AdamConfig) -> f64 {
    debug_assert!(t >= 1);
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - cfg.beta2.powi(t as i32));
    theta - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)
}

/// First and second moments for every trainable tensor, plus the step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    moments: BTreeMap<String, Vec<(Vec<T>, Vec<T>)>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            moments: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamMap<T>, grads: &Gradients<T>, cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64_lossy(cfg.learning_rate);
        let eps = T::from_f64_lossy(cfg.epsilon);
        for (id, node_grads) in grads {
            let Some(p) = params.get_mut(id) else {
                continue;
            };
            let moments = self.moments.entry(id.clone()).or_insert_with(|| {
                node_grads
                    .iter()
                    .map(|g| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]))
                    .collect()
            });
            for ((tensor, g), (m, v)) in p.tensors.iter_mut().zip(node_grads).zip(moments) {
                for (((theta, &g), m), v) in tensor
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
