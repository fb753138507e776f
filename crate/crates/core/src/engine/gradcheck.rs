use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EngineError, ExecutableModel, ForwardOptions, Tensor};

/// Denominator floor of the relative error, so that two gradients that are
/// both numerically zero do not count as a mismatch.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameterized node.
    pub per_node: BTreeMap<String, f64>,
    pub coordinates: usize,
}

/// Compares analytic gradients with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on up to `coords_per_tensor` randomly chosen
/// coordinates of every trainable tensor. Relative error is
/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check(
    model: &ExecutableModel<f64>,
    inputs: &[Tensor<f64>],
    labels: &[u32],
    eps: f64,
    opts: ForwardOptions,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, EngineError> {
    let (_, grads, _) = model.loss_and_gradients(inputs, labels, opts)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_node = BTreeMap::new();
    let mut coordinates = 0;
    for (id, node_grads) in &grads {
        let mut worst: f64 = 0.0;
        for (ti, g) in node_grads.iter().enumerate() {
            let n = g.len();
            let picks = sample(&mut rng, n, coords_per_tensor.min(n)).into_vec();
            for k in picks {
                let orig = model.params()[id].tensors[ti].data()[k];
                let mut eval_at = |v: f64| -> Result<f64, EngineError> {
                    probe.params_mut().get_mut(id).expect("node").tensors[ti].data_mut()[k] = v;
                    Ok(probe.loss_and_gradients(inputs, labels, opts)?.0)
                };
                let plus = eval_at(orig + eps)?;
                let minus = eval_at(orig - eps)?;
                eval_at(orig)?;
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = g.data()[k];
                let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
                log::trace!("{id}[{ti}][{k}] analytic {analytic:e} numeric {numeric:e}");
                worst = worst.max((analytic - numeric).abs() / denom);
                coordinates += 1;
            }
        }
        per_node.insert(id.clone(), worst);
    }
    let max_rel_error = per_node.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_node,
        coordinates,
    })
}
