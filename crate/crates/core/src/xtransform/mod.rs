//! Base transform: per-modality informativeness probes, super-layer
//! scaling, connection weighting, connection placement and assembly of the
//! cross-modal network.

mod build;
mod formulas;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{train_val_indices, DataError, ModalDataset};
use crate::engine::{self, mix_seed, EngineError, ExecutableModel, History, TrainConfig};
use crate::ir::{Blueprint, IrError, Shape3, XBlueprint};

pub use build::{
    assemble_xcnn, build_superlayers, place_connections, probe_blueprint, scaled_width,
};
pub use formulas::{compute_connection_weights, compute_scales, ScalePlan, WeightMatrix};

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("probe for modality `{modality}` failed: {source}")]
    Probe {
        modality: String,
        #[source]
        source: EngineError,
    },
    #[error("modality `{modality}` has degenerate score {score}")]
    DegenerateScore { modality: String, score: f64 },
    #[error("invalid transform config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    /// Scale exponent: how strongly informativeness buys super-layer width.
    pub alpha: f64,
    /// Weight exponent: how strongly informativeness buys connection weight.
    pub beta: f64,
    pub probe_epochs: usize,
    /// Fraction of the training data used to fit probes; the rest scores them.
    pub internal_split: f64,
    pub drop_threshold: f64,
    /// Probe repetitions averaged into each score.
    pub probe_seeds: usize,
    pub seed: u64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            alpha: 1.0,
            beta: 2.0,
            probe_epochs: 20,
            internal_split: 0.8,
            drop_threshold: 0.05,
            probe_seeds: 1,
            seed: 0,
        }
    }
}

impl TransformConfig {
    /// (α, β) = (1, 2), used with KerasNet-style bases.
    pub fn kerasnet_preset() -> Self {
        TransformConfig::default()
    }

    /// (α, β) = (2, 4), used with FitNet-style bases.
    pub fn fitnet_preset() -> Self {
        TransformConfig {
            alpha: 2.0,
            beta: 4.0,
            ..TransformConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let bad = |m: String| Err(TransformError::Config(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if self.probe_epochs == 0 {
            return bad("probe_epochs must be at least 1".into());
        }
        if !(self.internal_split > 0.0 && self.internal_split < 1.0) {
            return bad(format!(
                "internal_split {} outside (0, 1)",
                self.internal_split
            ));
        }
        if !(0.0..0.5).contains(&self.drop_threshold) {
            return bad(format!(
                "drop_threshold {} outside [0, 0.5)",
                self.drop_threshold
            ));
        }
        if self.probe_seeds == 0 {
            return bad("probe_seeds must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-modality probe accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformativenessReport {
    pub class_count: usize,
    /// Best validation accuracy of each modality's probe (mean over probe seeds).
    pub scores: IndexMap<String, f64>,
    pub probe_histories: IndexMap<String, Vec<History>>,
}

impl InformativenessReport {
    pub fn modalities(&self) -> Vec<String> {
        self.scores.keys().cloned().collect()
    }

    /// Scores floored at chance level `1 / class_count`, the values that
    /// enter the scale and weight formulas.
    pub fn effective_scores(&self) -> IndexMap<String, f64> {
        let chance = 1.0 / self.class_count as f64;
        self.scores
            .iter()
            .map(|(m, &n)| (m.clone(), n.max(chance)))
            .collect()
    }
}

/// Trains one width-reduced probe per modality and records its best
/// validation accuracy.
///
/// Every probe is the base network with extractor widths scaled by
/// `1 / modality_count`, fed a single modality. All probes share one
/// stratified internal split. Probes train concurrently.
pub fn measure_informativeness(
    b: &Blueprint,
    data: &ModalDataset,
    cfg: &TransformConfig,
    train: &TrainConfig,
) -> Result<InformativenessReport, TransformError> {
    cfg.validate()?;
    let n_mod = data.modality_count();
    if n_mod < 2 {
        return Err(TransformError::Config(format!(
            "the transform needs at least 2 modalities, got {n_mod}"
        )));
    }
    let (ti, vi) = train_val_indices(
        data.labels(),
        data.class_count(),
        cfg.internal_split,
        cfg.seed,
    )?;
    let fit = data.select(&ti);
    let val = data.select(&vi);
    let scale = 1.0 / n_mod as f64;

    let results: Vec<Result<(f64, Vec<History>), TransformError>> = (0..n_mod)
        .into_par_iter()
        .map(|i| {
            let name = &data.names()[i];
            let wrap = |source| TransformError::Probe {
                modality: name.clone(),
                source,
            };
            let probe = probe_blueprint(b, data.view_shape(i), scale)?;
            let mut histories = Vec::with_capacity(cfg.probe_seeds);
            let mut total = 0.0;
            for k in 0..cfg.probe_seeds {
                let seed = if k == 0 {
                    cfg.seed
                } else {
                    mix_seed(cfg.seed, k as u64)
                };
                let mut model =
                    ExecutableModel::<f32>::from_blueprint(&probe, seed).map_err(wrap)?;
                let tc = TrainConfig {
                    epochs: cfg.probe_epochs,
                    seed,
                    ..*train
                };
                let h = engine::train(
                    &mut model,
                    fit.view_samples(i),
                    Some(val.view_samples(i)),
                    &tc,
                )
                .map_err(wrap)?;
                total += h.best_val().map(|(_, a)| a).unwrap_or(0.0);
                histories.push(h);
            }
            log::info!("probe {name}: {:.4}", total / cfg.probe_seeds as f64);
            Ok((total / cfg.probe_seeds as f64, histories))
        })
        .collect();

    let mut scores = IndexMap::new();
    let mut probe_histories = IndexMap::new();
    for (name, r) in data.names().iter().zip(results) {
        let (score, h) = r?;
        scores.insert(name.clone(), score);
        probe_histories.insert(name.clone(), h);
    }
    Ok(InformativenessReport {
        class_count: data.class_count(),
        scores,
        probe_histories,
    })
}

/// The base network re-fed with all modalities stacked along channels: the
/// single-stream model the cross-modal network is compared against.
pub fn stacked_base(
    b: &Blueprint,
    inputs: &IndexMap<String, Shape3>,
) -> Result<Blueprint, TransformError> {
    let first = inputs
        .values()
        .next()
        .ok_or_else(|| TransformError::Config("no modalities".into()))?;
    let c = inputs.values().map(|s| s.c).sum();
    Ok(Blueprint::new(
        Shape3::new(first.h, first.w, c),
        b.nodes().to_vec(),
        b.output_id(),
        b.classifier_boundary().map(str::to_string),
    )?)
}

/// Builds the cross-modal network for given scales and weights.
pub fn build_xcnn(
    b: &Blueprint,
    inputs: &IndexMap<String, Shape3>,
    scales: &ScalePlan,
    weights: &WeightMatrix,
    drop_threshold: f64,
) -> Result<XBlueprint, TransformError> {
    let (extractor, classifier) = b.split_at_classifier()?;
    let points = crate::ir::extractor_insertion_points(&extractor)?;
    let superlayers = build_superlayers(&extractor, scales, inputs)?;
    let connections = place_connections(&superlayers, &points, weights, drop_threshold)?;
    let order: Vec<String> = inputs.keys().cloned().collect();
    assemble_xcnn(&order, superlayers, points, connections, &classifier)
}

/// Summary of one transform, written next to the cross-modal blueprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub alpha: f64,
    pub beta: f64,
    pub drop_threshold: f64,
    pub scores: IndexMap<String, f64>,
    pub effective_scores: IndexMap<String, f64>,
    pub scales: ScalePlan,
    pub weights: WeightMatrix,
    pub insertion_points: Vec<String>,
    pub active_connections: usize,
    pub dropped_connections: usize,
    pub base_parameters: usize,
    pub xcnn_parameters: usize,
}

impl TransformReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }
}

/// Scales, connection weights, placement and assembly from an existing
/// informativeness report.
pub fn transform_from_report(
    b: &Blueprint,
    inputs: &IndexMap<String, Shape3>,
    report: &InformativenessReport,
    cfg: &TransformConfig,
) -> Result<(XBlueprint, TransformReport), TransformError> {
    cfg.validate()?;
    let order: Vec<String> = inputs.keys().cloned().collect();
    if report.modalities() != order {
        return Err(TransformError::Config(format!(
            "report covers {:?} but the data has {:?}",
            report.modalities(),
            order
        )));
    }
    let effective = report.effective_scores();
    let scales = compute_scales(&effective, cfg.alpha)?;
    let weights = compute_connection_weights(&effective, cfg.beta)?;
    let x = build_xcnn(b, inputs, &scales, &weights, cfg.drop_threshold)?;
    let active = x.active_connections().count();
    let summary = TransformReport {
        alpha: cfg.alpha,
        beta: cfg.beta,
        drop_threshold: cfg.drop_threshold,
        scores: report.scores.clone(),
        effective_scores: effective,
        scales,
        weights,
        insertion_points: x.insertion_points().to_vec(),
        active_connections: active,
        dropped_connections: x.connections().len() - active,
        base_parameters: stacked_base(b, inputs)?.parameter_count(),
        xcnn_parameters: x.parameter_count(),
    };
    Ok((x, summary))
}

pub struct TransformOutput {
    pub xblueprint: XBlueprint,
    pub informativeness: InformativenessReport,
    pub report: TransformReport,
}

/// Probes, then builds the cross-modal network.
pub fn transform(
    b: &Blueprint,
    data: &ModalDataset,
    cfg: &TransformConfig,
    train: &TrainConfig,
) -> Result<TransformOutput, TransformError> {
    let informativeness = measure_informativeness(b, data, cfg, train)?;
    let (xblueprint, report) =
        transform_from_report(b, &modal_inputs(data), &informativeness, cfg)?;
    Ok(TransformOutput {
        xblueprint,
        informativeness,
        report,
    })
}

/// Per-modality input shapes in dataset order.
pub fn modal_inputs(data: &ModalDataset) -> IndexMap<String, Shape3> {
    data.names()
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), data.view_shape(i)))
        .collect()
}
