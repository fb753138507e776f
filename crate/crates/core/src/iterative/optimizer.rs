use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::xtransform::WeightMatrix;

/// Key of an ordered modality pair in records and optimizer state.
pub fn pair_key(src: &str, dst: &str) -> String {
    format!("{src}>{dst}")
}

/// Nesterov-Adam ascent state over connection weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightOptState {
    pub m: IndexMap<String, f64>,
    pub v: IndexMap<String, f64>,
    pub t: u64,
    pub lr_w: f64,
    pub decay: f64,
    /// Weight perturbation used to estimate gradients.
    pub delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl WeightOptState {
    pub fn new(lr_w: f64, decay: f64, delta: f64) -> Self {
        WeightOptState {
            m: IndexMap::new(),
            v: IndexMap::new(),
            t: 0,
            lr_w,
            decay,
            delta,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One ascent step on every ordered pair, then decay, clamping to [0, 1].
///
/// The step uses bias-corrected moments with a Nesterov look-ahead on the
/// first moment. Decay multiplies every weight by `1 − decay` afterwards,
/// so with zero gradients weights shrink geometrically towards the drop
/// threshold. Pairs missing from `grads` count as zero gradient.
pub fn weight_update(
    state: &mut WeightOptState,
    grads: &IndexMap<String, f64>,
    weights: &WeightMatrix,
) -> WeightMatrix {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let mut next = weights.clone();
    let order = weights.order().to_vec();
    for (i, j) in weights.pairs() {
        let key = pair_key(&order[i], &order[j]);
        let g = grads.get(&key).copied().unwrap_or(0.0);
        let m = state.m.entry(key.clone()).or_insert(0.0);
        *m = b1 * *m + (1.0 - b1) * g;
        let m_now = *m;
        let v = state.v.entry(key).or_insert(0.0);
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = m_now / (1.0 - b1.powi(t));
        let v_hat = *v / (1.0 - b2.powi(t));
        let look_ahead = b1 * m_hat + (1.0 - b1) * g / (1.0 - b1.powi(t));
        let stepped = weights.get(i, j) + state.lr_w * look_ahead / (v_hat.sqrt() + state.epsilon);
        next.set(i, j, (stepped * (1.0 - state.decay)).clamp(0.0, 1.0));
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(w01: f64, w10: f64) -> WeightMatrix {
        let mut w = WeightMatrix::uniform(&["a".into(), "b".into()], 0.0);
        w.set(0, 1, w01);
        w.set(1, 0, w10);
        w
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut s = WeightOptState::new(0.05, 0.0, 0.1);
        let w = two(0.3, 0.7);
        let mut cur = w.clone();
        for _ in 0..5 {
            cur = weight_update(&mut s, &IndexMap::new(), &cur);
        }
        assert_eq!(cur, w);
    }

    #[test]
    fn decay_alone_reaches_the_drop_threshold() {
        let mut s = WeightOptState::new(0.05, 0.1, 0.1);
        let w1 = weight_update(&mut s, &IndexMap::new(), &two(0.06, 0.5));
        assert!((w1.get(0, 1) - 0.054).abs() < 1e-12);
        let w2 = weight_update(&mut s, &IndexMap::new(), &w1);
        assert!(w2.get(0, 1) < 0.05);
    }

    #[test]
    fn persistent_positive_gradient_climbs_to_the_clamp() {
        let mut s = WeightOptState::new(0.05, 0.01, 0.1);
        let grads: IndexMap<String, f64> = [(pair_key("a", "b"), 0.2)].into_iter().collect();
        let mut w = two(0.3, 0.3);
        let mut prev = w.get(0, 1);
        for _ in 0..40 {
            w = weight_update(&mut s, &grads, &w);
            let cur = w.get(0, 1);
            if prev < 1.0 - 0.05 {
                assert!(cur > prev, "{cur} <= {prev}");
            }
            assert!(cur <= 1.0);
            prev = cur;
        }
        assert!(prev > 0.95);
        assert!(w.get(1, 0) < 0.3);
    }
}
