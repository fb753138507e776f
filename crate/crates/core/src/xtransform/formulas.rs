use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::TransformError;

/// Super-layer width multipliers, one per modality, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub scales: IndexMap<String, f64>,
}

impl ScalePlan {
    pub fn get(&self, modality: &str) -> Option<f64> {
        self.scales.get(modality).copied()
    }
}

/// Connection weights over ordered modality pairs. Stored densely in
/// modality order; the diagonal is unused and held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    order: Vec<String>,
    w: Vec<Vec<f64>>,
}

impl WeightMatrix {
    /// Every off-diagonal entry set to `value`.
    pub fn uniform(order: &[String], value: f64) -> Self {
        let n = order.len();
        let w = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { value }).collect())
            .collect();
        WeightMatrix {
            order: order.to_vec(),
            w,
        }
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.w[src][dst]
    }

    pub fn set(&mut self, src: usize, dst: usize, value: f64) {
        assert_ne!(src, dst, "no self-connections");
        self.w[src][dst] = value;
    }

    pub fn index_of(&self, modality: &str) -> Option<usize> {
        self.order.iter().position(|m| m == modality)
    }

    pub fn by_name(&self, src: &str, dst: &str) -> Option<f64> {
        Some(self.w[self.index_of(src)?][self.index_of(dst)?])
    }

    /// Ordered pairs `(src, dst)`, `src != dst`, row by row.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.order.len();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// Sum of the weights on connections leaving `src`.
    pub fn outgoing_sum(&self, src: usize) -> f64 {
        (0..self.len())
            .filter(|&j| j != src)
            .map(|j| self.w[src][j])
            .sum()
    }
}

fn checked_scores(scores: &IndexMap<String, f64>) -> Result<(), TransformError> {
    if scores.is_empty() {
        return Err(TransformError::Config("no modality scores".into()));
    }
    for (m, &n) in scores {
        if !(n > 0.0 && n <= 1.0) {
            return Err(TransformError::DegenerateScore {
                modality: m.clone(),
                score: n,
            });
        }
    }
    Ok(())
}

/// `s_i = n_i^α / Σ_j n_j^α`.
pub fn compute_scales(
    scores: &IndexMap<String, f64>,
    alpha: f64,
) -> Result<ScalePlan, TransformError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TransformError::Config(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    checked_scores(scores)?;
    // Dividing by the largest score first keeps the powers away from
    // underflow without changing the ratios.
    let top = scores.values().copied().fold(0.0, f64::max);
    let powers: Vec<f64> = scores.values().map(|n| (n / top).powf(alpha)).collect();
    let total: f64 = powers.iter().sum();
    Ok(ScalePlan {
        scales: scores
            .keys()
            .zip(powers)
            .map(|(m, p)| (m.clone(), p / total))
            .collect(),
    })
}

/// `w[i,j] = n_i^β / (n_i^β + n_j^β)` for every ordered pair.
pub fn compute_connection_weights(
    scores: &IndexMap<String, f64>,
    beta: f64,
) -> Result<WeightMatrix, TransformError> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(TransformError::Config(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    checked_scores(scores)?;
    let order: Vec<String> = scores.keys().cloned().collect();
    let n: Vec<f64> = scores.values().copied().collect();
    let mut w = WeightMatrix::uniform(&order, 0.0);
    for (i, j) in (0..n.len()).flat_map(|i| (0..n.len()).map(move |j| (i, j))) {
        if i != j {
            let a = n[i].powf(beta);
            let b = n[j].powf(beta);
            w.set(i, j, a / (a + b));
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> IndexMap<String, f64> {
        v.iter()
            .enumerate()
            .map(|(i, &n)| (format!("m{i}"), n))
            .collect()
    }

    #[test]
    fn equal_scores_split_evenly() {
        for alpha in [0.5, 1.0, 2.0, 7.0] {
            let s = compute_scales(&scores(&[0.5, 0.5]), alpha).unwrap();
            assert_eq!(
                s.scales.values().copied().collect::<Vec<_>>(),
                vec![0.5, 0.5]
            );
        }
    }

    #[test]
    fn zero_score_is_degenerate() {
        assert!(matches!(
            compute_scales(&scores(&[0.5, 0.0]), 1.0),
            Err(TransformError::DegenerateScore { .. })
        ));
        assert!(compute_connection_weights(&scores(&[0.0, 0.5]), 2.0).is_err());
        assert!(compute_scales(&scores(&[0.5]), 0.0).is_err());
    }

    #[test]
    fn weight_matrix_pairs_skip_the_diagonal() {
        let w = WeightMatrix::uniform(&["a".into(), "b".into(), "c".into()], 0.5);
        let pairs: Vec<_> = w.pairs().collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
        assert_eq!(w.outgoing_sum(1), 1.0);
        assert_eq!(w.by_name("c", "a"), Some(0.5));
    }
}
