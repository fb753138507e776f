//! Iterative refinement of connection weights.
//!
//! Generation 0 uses equal weights and generation 1 the informativeness
//! weights. Every later generation first estimates how validation accuracy
//! responds to each connection weight, takes one ascent step on the
//! weights, rebuilds the network, inherits parameters from a short window
//! of previous generations and trains. Weights and model parameters are
//! never updated in the same sub-step.

mod optimizer;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{train_val_indices, DataError, ModalDataset};
use crate::engine::{
    self, container, mix_seed, EngineError, ExecutableModel, InheritStats, ParamMap, TrainConfig,
};
use crate::ir::{Blueprint, IrError, Shape3, XBlueprint};
use crate::xtransform::{
    build_xcnn, compute_connection_weights, compute_scales, measure_informativeness, modal_inputs,
    InformativenessReport, ScalePlan, TransformConfig, TransformError, WeightMatrix,
};

pub use optimizer::{pair_key, weight_update, WeightOptState};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const TRAJECTORY_META_FILE: &str = "trajectory.meta.jsonl";
pub const INFORMATIVENESS_FILE: &str = "informativeness.json";

#[derive(Debug, thiserror::Error)]
pub enum IterError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid iterative config: {0}")]
    Config(String),
    #[error("cannot resume from {path}: {message}")]
    Resume { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IterError + '_ {
    move |e| IterError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterConfig {
    /// Total generations including the equal-weight and informativeness
    /// generations.
    pub generations: usize,
    pub epochs_per_gen: usize,
    /// Epochs spent training the connection-free network whose parameters
    /// seed generation 0.
    pub pretrain_epochs: usize,
    pub averaging_window: usize,
    pub delta: f64,
    pub lr_w: f64,
    pub decay: f64,
    /// Measure each weight perturbation against an unperturbed model trained
    /// alongside it instead of against the previous generation.
    pub control_variant: bool,
    pub seed: u64,
}

impl Default for IterConfig {
    fn default() -> Self {
        IterConfig {
            generations: 15,
            epochs_per_gen: 10,
            pretrain_epochs: 5,
            averaging_window: 2,
            delta: 0.1,
            lr_w: 0.05,
            decay: 0.01,
            control_variant: true,
            seed: 0,
        }
    }
}

impl IterConfig {
    pub fn validate(&self) -> Result<(), IterError> {
        let bad = |m: String| Err(IterError::Config(m));
        if self.generations < 2 {
            return bad(format!(
                "generations must be at least 2, got {}",
                self.generations
            ));
        }
        if self.epochs_per_gen == 0 {
            return bad("epochs_per_gen must be at least 1".into());
        }
        if self.averaging_window == 0 {
            return bad("averaging_window must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad(format!("delta {} outside (0, 0.5)", self.delta));
        }
        if !(self.lr_w > 0.0 && self.lr_w.is_finite()) {
            return bad(format!("lr_w must be positive, got {}", self.lr_w));
        }
        if !(self.decay >= 0.0 && self.decay < 1.0) {
            return bad(format!("decay {} outside [0, 1)", self.decay));
        }
        Ok(())
    }
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub weights: WeightMatrix,
    pub val_accuracy: f64,
    /// Accuracy of each perturbed variant, keyed `src>dst`.
    pub pair_accuracies: IndexMap<String, f64>,
    pub pair_gradients: IndexMap<String, f64>,
    /// Pairs whose perturbation was clamped to nothing at weight 1.
    pub clamped: Vec<String>,
    /// Pairs whose variant diverged; their gradient is recorded as 0.
    pub diverged: Vec<String>,
    pub control_accuracy: Option<f64>,
    /// Parameter container of this generation's trained model, relative to
    /// the run directory.
    pub params_ref: String,
    /// Weight optimizer state after producing `weights`.
    pub optimizer: WeightOptState,
}

/// Wall-clock timing kept apart from the trajectory so that the trajectory
/// itself stays byte-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerationMeta {
    index: usize,
    wall_seconds: f64,
}

/// Where to persist a run and when to stop early.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub dir: Option<PathBuf>,
    /// Stop once this many generations are on record, as if interrupted.
    pub stop_after: Option<usize>,
}

pub struct IterOutput {
    pub records: Vec<GenerationRecord>,
    /// Index of the generation with the best validation accuracy (earliest
    /// on ties).
    pub best: usize,
    pub xblueprint: XBlueprint,
    pub model: ExecutableModel<f32>,
    pub informativeness: InformativenessReport,
    /// False when `stop_after` ended the run early.
    pub complete: bool,
}

impl IterOutput {
    pub fn best_record(&self) -> &GenerationRecord {
        &self.records[self.best]
    }
}

/// Connection sub-graph nodes: their shapes follow the weights, so they are
/// only inherited unchanged.
fn is_connection_node(id: &str) -> bool {
    id.contains('>')
}

fn gen_params_file(index: usize) -> String {
    format!("gen_{index:03}.params")
}

fn gen_xblueprint_file(index: usize) -> String {
    format!("gen_{index:03}.xblueprint.json")
}

/// Trains the network with every connection removed so that super-layers
/// and classifier settle before any connection exists.
pub fn pretrain_lock(
    x: &XBlueprint,
    fit: &ModalDataset,
    epochs: usize,
    train: &TrainConfig,
    seed: u64,
) -> Result<ExecutableModel<f32>, IterError> {
    let stripped = x.connections().iter().map(|c| {
        let mut c = c.clone();
        c.projection_channels = 0;
        c
    });
    let locked = x.with_connections(stripped.collect())?;
    let mut model = ExecutableModel::<f32>::from_xblueprint(&locked, seed)?;
    if epochs > 0 {
        let tc = TrainConfig {
            epochs,
            seed,
            ..*train
        };
        engine::train(&mut model, fit.samples(), None, &tc)?;
    }
    Ok(model)
}

/// Compiles `x_new` and copies over every parameter of `prev` that still
/// fits. Connection nodes are copied only when their shape is unchanged.
pub fn inherit_params(
    prev: &ExecutableModel<f32>,
    x_new: &XBlueprint,
    seed: u64,
) -> Result<(ExecutableModel<f32>, InheritStats), IterError> {
    let mut model = ExecutableModel::<f32>::from_xblueprint(x_new, seed)?;
    let stats = model.inherit_from(prev, is_connection_node);
    Ok((model, stats))
}

/// Element-wise mean over a window of parameter maps, oldest first.
///
/// A node is averaged over the generations in which it has exactly the
/// shapes it has in its most recent appearance; a node seen in one
/// generation only passes through unchanged.
pub fn perturb_params(window: &[&ParamMap<f32>]) -> ParamMap<f32> {
    let mut out = ParamMap::new();
    for (k, map) in window.iter().enumerate().rev() {
        for (id, latest) in map.iter() {
            if out.contains_key(id) {
                continue;
            }
            let matching: Vec<_> = window[..=k]
                .iter()
                .filter_map(|m| m.get(id))
                .filter(|p| {
                    p.tensors.len() == latest.tensors.len()
                        && p.tensors
                            .iter()
                            .zip(&latest.tensors)
                            .all(|(a, b)| a.shape() == b.shape())
                })
                .collect();
            let mut avg = latest.clone();
            if matching.len() > 1 {
                let count = matching.len() as f64;
                for (t, tensor) in avg.tensors.iter_mut().enumerate() {
                    for (e, v) in tensor.data_mut().iter_mut().enumerate() {
                        let sum: f64 = matching.iter().map(|p| p.tensors[t].data()[e] as f64).sum();
                        *v = (sum / count) as f32;
                    }
                }
            }
            out.insert(id.clone(), avg);
        }
    }
    out
}

/// The fit/validation split and everything that stays fixed across
/// generations.
pub struct IterContext<'a> {
    pub base: &'a Blueprint,
    pub inputs: IndexMap<String, Shape3>,
    pub scales: ScalePlan,
    pub fit: ModalDataset,
    pub val: ModalDataset,
    pub drop_threshold: f64,
    pub train: TrainConfig,
    pub cfg: IterConfig,
}

impl IterContext<'_> {
    fn build(&self, weights: &WeightMatrix) -> Result<XBlueprint, IterError> {
        Ok(build_xcnn(
            self.base,
            &self.inputs,
            &self.scales,
            weights,
            self.drop_threshold,
        )?)
    }

    /// Inherits from `source`, trains one generation's worth of epochs and
    /// returns the model with its validation accuracy.
    fn train_generation(
        &self,
        source: &ExecutableModel<f32>,
        x: &XBlueprint,
        compile_seed: u64,
        train_seed: u64,
    ) -> Result<(ExecutableModel<f32>, f64), IterError> {
        let (mut model, _) = inherit_params(source, x, compile_seed)?;
        let tc = TrainConfig {
            epochs: self.cfg.epochs_per_gen,
            seed: train_seed,
            ..self.train
        };
        engine::train(&mut model, self.fit.samples(), None, &tc)?;
        let acc = engine::evaluate(&model, self.val.samples())?;
        Ok((model, acc))
    }
}

fn compile_seed(seed: u64, generation: usize) -> u64 {
    mix_seed(seed, generation as u64)
}

fn train_seed(seed: u64, generation: usize) -> u64 {
    mix_seed(seed ^ 0x7261_696e, generation as u64)
}

fn probe_train_seed(seed: u64, generation: usize) -> u64 {
    mix_seed(seed ^ 0x7072_6f62, generation as u64)
}

/// `(acc_variant − acc_ref) / δ_eff` where `δ_eff` is the perturbation left
/// after clamping `w + delta` at 1; `None` when nothing is left.
pub fn forward_difference(w: f64, delta: f64, acc_variant: f64, acc_ref: f64) -> Option<f64> {
    let delta_eff = (w + delta).min(1.0) - w;
    (delta_eff > 0.0).then(|| (acc_variant - acc_ref) / delta_eff)
}

/// Per-pair finite-difference gradient estimates around `base`.
pub struct PairMeasurement {
    pub accuracies: IndexMap<String, f64>,
    pub gradients: IndexMap<String, f64>,
    pub clamped: Vec<String>,
    pub diverged: Vec<String>,
    pub control_accuracy: Option<f64>,
}

/// Trains one variant per ordered pair with that pair's weight raised by
/// `delta` (clamped at 1) and estimates `g = (acc_variant − acc_ref) / δ`.
///
/// All variants inherit from `base` and share compile and training seeds,
/// so they differ only in the perturbed connection. With a control variant
/// the reference accuracy comes from `base` trained the same way with its
/// weights unchanged; otherwise it is `base_accuracy`.
pub fn measure_pair_gradients(
    ctx: &IterContext<'_>,
    base: &ExecutableModel<f32>,
    base_accuracy: f64,
    weights: &WeightMatrix,
    generation: usize,
) -> Result<PairMeasurement, IterError> {
    let seed = ctx.cfg.seed;
    let (cs, ts) = (
        compile_seed(seed, generation),
        probe_train_seed(seed, generation),
    );
    let order = weights.order().to_vec();
    let pairs: Vec<(usize, usize)> = weights.pairs().collect();

    let reference = if ctx.cfg.control_variant {
        let x = ctx.build(weights)?;
        Some(ctx.train_generation(base, &x, cs, ts)?.1)
    } else {
        None
    };
    let ref_acc = reference.unwrap_or(base_accuracy);

    let results: Vec<Result<Option<f64>, IterError>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let raised = (weights.get(i, j) + ctx.cfg.delta).min(1.0);
            if raised <= weights.get(i, j) {
                return Ok(None);
            }
            let mut w = weights.clone();
            w.set(i, j, raised);
            let x = ctx.build(&w)?;
            match ctx.train_generation(base, &x, cs, ts) {
                Ok((_, acc)) => Ok(Some(acc)),
                Err(IterError::Engine(EngineError::Diverged { .. })) => Ok(Some(f64::NAN)),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut m = PairMeasurement {
        accuracies: IndexMap::new(),
        gradients: IndexMap::new(),
        clamped: Vec::new(),
        diverged: Vec::new(),
        control_accuracy: reference,
    };
    for (&(i, j), r) in pairs.iter().zip(results) {
        let key = pair_key(&order[i], &order[j]);
        match r? {
            None => {
                m.gradients.insert(key.clone(), 0.0);
                m.clamped.push(key);
            }
            Some(acc) if acc.is_nan() => {
                log::warn!("variant {key} diverged; gradient set to 0");
                m.gradients.insert(key.clone(), 0.0);
                m.diverged.push(key);
            }
            Some(acc) => {
                let g = forward_difference(weights.get(i, j), ctx.cfg.delta, acc, ref_acc)
                    .unwrap_or(0.0);
                m.accuracies.insert(key.clone(), acc);
                m.gradients.insert(key, g);
            }
        }
    }
    Ok(m)
}

/// Probes informativeness (or reuses a stored report), then runs the
/// generation loop.
pub fn iterate(
    b: &Blueprint,
    data: &ModalDataset,
    tcfg: &TransformConfig,
    icfg: &IterConfig,
    train: &TrainConfig,
    run: &RunControl,
) -> Result<IterOutput, IterError> {
    if let Some(dir) = &run.dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let stored = run.dir.as_ref().map(|d| d.join(INFORMATIVENESS_FILE));
    let report = match &stored {
        Some(p) if p.exists() => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| IterError::Resume {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        _ => {
            let r = measure_informativeness(b, data, tcfg, train)?;
            if let Some(p) = &stored {
                write_file(p, &serde_json::to_string_pretty(&r).expect("plain data"))?;
            }
            r
        }
    };
    iterate_with_report(b, data, &report, tcfg, icfg, train, run)
}

/// The generation loop for a given informativeness report.
pub fn iterate_with_report(
    b: &Blueprint,
    data: &ModalDataset,
    report: &InformativenessReport,
    tcfg: &TransformConfig,
    icfg: &IterConfig,
    train: &TrainConfig,
    run: &RunControl,
) -> Result<IterOutput, IterError> {
    icfg.validate()?;
    tcfg.validate()?;
    let effective = report.effective_scores();
    let (ti, vi) = train_val_indices(
        data.labels(),
        data.class_count(),
        tcfg.internal_split,
        icfg.seed,
    )?;
    let ctx = IterContext {
        base: b,
        inputs: modal_inputs(data),
        scales: compute_scales(&effective, tcfg.alpha)?,
        fit: data.select(&ti),
        val: data.select(&vi),
        drop_threshold: tcfg.drop_threshold,
        train: *train,
        cfg: icfg.clone(),
    };
    let order: Vec<String> = ctx.inputs.keys().cloned().collect();
    let informed = compute_connection_weights(&effective, tcfg.beta)?;
    let seed = icfg.seed;

    if let Some(dir) = &run.dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut records: Vec<GenerationRecord> = match &run.dir {
        Some(dir) => load_trajectory(dir)?,
        None => Vec::new(),
    };
    if records.len() > icfg.generations {
        records.truncate(icfg.generations);
    }
    if let Some(r) = records.first() {
        if r.weights.order() != order.as_slice() {
            return Err(IterError::Resume {
                path: run.dir.clone().unwrap_or_default(),
                message: format!(
                    "trajectory covers {:?}, data has {:?}",
                    r.weights.order(),
                    order
                ),
            });
        }
    }

    // Trained models of the last `averaging_window` generations, oldest first.
    let mut window: Vec<(XBlueprint, ExecutableModel<f32>)> = Vec::new();
    let mut best: Option<(usize, XBlueprint, ExecutableModel<f32>)> = None;
    if let Some(dir) = &run.dir {
        rewrite_trajectory(dir, &records)?;
        let first = records.len().saturating_sub(icfg.averaging_window);
        for r in &records[first..] {
            window.push(load_generation(dir, r)?);
        }
    }

    let mut complete = true;
    while records.len() < icfg.generations {
        if run.stop_after.is_some_and(|s| records.len() >= s) {
            complete = false;
            break;
        }
        let g = records.len();
        let started = Instant::now();
        let (weights, measurement, opt) = match g {
            0 => (
                WeightMatrix::uniform(&order, 0.5),
                None,
                WeightOptState::new(icfg.lr_w, icfg.decay, icfg.delta),
            ),
            1 => (informed.clone(), None, records[0].optimizer.clone()),
            _ => {
                let prev = &records[g - 1];
                let (_, prev_model) = window.last().expect("window holds the previous generation");
                let m =
                    measure_pair_gradients(&ctx, prev_model, prev.val_accuracy, &prev.weights, g)?;
                let mut opt = prev.optimizer.clone();
                let w = weight_update(&mut opt, &m.gradients, &prev.weights);
                (w, Some(m), opt)
            }
        };
        let x = ctx.build(&weights)?;
        let source = if g == 0 {
            let x_lock = ctx.build(&WeightMatrix::uniform(&order, 0.0))?;
            pretrain_lock(
                &x_lock,
                &ctx.fit,
                icfg.pretrain_epochs,
                train,
                mix_seed(seed, u64::MAX),
            )?
        } else {
            let maps: Vec<&ParamMap<f32>> = window.iter().map(|(_, m)| m.params()).collect();
            let averaged = perturb_params(&maps);
            let mut src = window.last().expect("non-empty window").1.clone();
            let own: ParamMap<f32> = averaged
                .into_iter()
                .filter(|(id, _)| src.params().contains_key(id))
                .collect();
            src.set_params(own)?;
            src
        };
        let (model, acc) =
            ctx.train_generation(&source, &x, compile_seed(seed, g), train_seed(seed, g))?;
        log::info!("generation {g}: val {acc:.4}");

        let m = measurement.unwrap_or(PairMeasurement {
            accuracies: IndexMap::new(),
            gradients: IndexMap::new(),
            clamped: Vec::new(),
            diverged: Vec::new(),
            control_accuracy: None,
        });
        let record = GenerationRecord {
            index: g,
            weights,
            val_accuracy: acc,
            pair_accuracies: m.accuracies,
            pair_gradients: m.gradients,
            clamped: m.clamped,
            diverged: m.diverged,
            control_accuracy: m.control_accuracy,
            params_ref: gen_params_file(g),
            optimizer: opt,
        };
        if let Some(dir) = &run.dir {
            container::save_params(model.params(), &dir.join(&record.params_ref))?;
            write_file(&dir.join(gen_xblueprint_file(g)), &x.to_json())?;
            append_line(
                &dir.join(TRAJECTORY_FILE),
                &serde_json::to_string(&record).expect("plain data"),
            )?;
            let meta = GenerationMeta {
                index: g,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            append_line(
                &dir.join(TRAJECTORY_META_FILE),
                &serde_json::to_string(&meta).expect("plain data"),
            )?;
        }
        if best
            .as_ref()
            .is_none_or(|(i, _, _)| acc > records[*i].val_accuracy)
        {
            best = Some((g, x.clone(), model.clone()));
        }
        records.push(record);
        window.push((x, model));
        if window.len() > icfg.averaging_window {
            window.remove(0);
        }
    }

    let best_index =
        best_generation(&records).ok_or_else(|| IterError::Config("no generation ran".into()))?;
    let (xblueprint, model) = match best {
        Some((i, x, m)) if i == best_index => (x, m),
        _ => {
            let dir = run.dir.as_ref().expect("resumed runs are persisted");
            load_generation(dir, &records[best_index])?
        }
    };
    Ok(IterOutput {
        records,
        best: best_index,
        xblueprint,
        model,
        informativeness: report.clone(),
        complete,
    })
}

/// Highest validation accuracy, earliest generation on ties.
pub fn best_generation(records: &[GenerationRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if best.is_none_or(|b| r.val_accuracy > records[b].val_accuracy) {
            best = Some(i);
        }
    }
    best
}

/// Reads every complete record; a torn final line is ignored.
pub fn load_trajectory(dir: &Path) -> Result<Vec<GenerationRecord>, IterError> {
    let path = dir.join(TRAJECTORY_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        let r: GenerationRecord =
            serde_json::from_str(line.trim_end()).map_err(|e| IterError::Resume {
                path: path.clone(),
                message: e.to_string(),
            })?;
        if r.index != out.len() {
            return Err(IterError::Resume {
                path: path.clone(),
                message: format!("record {} found where {} was expected", r.index, out.len()),
            });
        }
        let complete =
            dir.join(&r.params_ref).exists() && dir.join(gen_xblueprint_file(r.index)).exists();
        if !complete {
            break;
        }
        out.push(r);
    }
    Ok(out)
}

fn rewrite_trajectory(dir: &Path, records: &[GenerationRecord]) -> Result<(), IterError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("plain data"));
        text.push('\n');
    }
    write_file(&dir.join(TRAJECTORY_FILE), &text)
}

fn load_generation(
    dir: &Path,
    r: &GenerationRecord,
) -> Result<(XBlueprint, ExecutableModel<f32>), IterError> {
    let xp = dir.join(gen_xblueprint_file(r.index));
    let text = fs::read_to_string(&xp).map_err(io_err(&xp))?;
    let x = XBlueprint::from_json(&text)?;
    let mut model = ExecutableModel::<f32>::from_xblueprint(&x, 0)?;
    model.set_params(container::load_params(&dir.join(&r.params_ref))?)?;
    Ok((x, model))
}

fn write_file(path: &Path, text: &str) -> Result<(), IterError> {
    fs::write(path, text).map_err(io_err(path))
}

fn append_line(path: &Path, line: &str) -> Result<(), IterError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    writeln!(f, "{line}").map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{NodeParams, Tensor};

    fn map(entries: &[(&str, Vec<f32>)]) -> ParamMap<f32> {
        entries
            .iter()
            .map(|(id, v)| {
                (
                    id.to_string(),
                    NodeParams {
                        tensors: vec![Tensor::new(vec![v.len()], v.clone()).unwrap()],
                        trainable: 1,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn averaging_two_generations_gives_the_midpoint() {
        let a = map(&[("n", vec![1.0, -2.0, 0.5])]);
        let b = map(&[("n", vec![1.2, -1.6, 0.9])]);
        let avg = perturb_params(&[&a, &b]);
        let got = avg["n"].tensors[0].data();
        for (g, want) in got.iter().zip([1.1f32, -1.8, 0.7]) {
            assert!((g - want).abs() < 1e-6);
        }
    }

    #[test]
    fn averaging_identical_maps_is_identity() {
        let a = map(&[("n", vec![0.3, 0.7]), ("m", vec![2.0])]);
        assert_eq!(perturb_params(&[&a, &a]), a);
    }

    #[test]
    fn nodes_in_one_generation_pass_through() {
        let a = map(&[("old", vec![1.0]), ("shared", vec![0.0, 0.0])]);
        let b = map(&[
            ("new", vec![5.0]),
            ("shared", vec![2.0, 4.0]),
            ("resized", vec![1.0]),
        ]);
        let c = map(&[("resized", vec![3.0, 3.0])]);
        let avg = perturb_params(&[&a, &b, &c]);
        assert_eq!(avg["old"].tensors[0].data(), &[1.0]);
        assert_eq!(avg["new"].tensors[0].data(), &[5.0]);
        assert_eq!(avg["shared"].tensors[0].data(), &[1.0, 2.0]);
        // only the latest shape takes part
        assert_eq!(avg["resized"].tensors[0].data(), &[3.0, 3.0]);
    }

    #[test]
    fn forward_difference_matches_hand_value() {
        let g = forward_difference(0.3, 0.1, 0.52, 0.50).unwrap();
        assert!((g - 0.2).abs() < 1e-12);
        assert_eq!(forward_difference(0.3, 0.1, 0.5, 0.5), Some(0.0));
        assert_eq!(forward_difference(1.0, 0.1, 0.9, 0.5), None);
        // partial clamp divides by what is left of delta
        assert!((forward_difference(0.95, 0.1, 0.51, 0.50).unwrap() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_single_generation() {
        let c = IterConfig {
            generations: 1,
            ..IterConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(IterConfig::default().validate().is_ok());
    }

    #[test]
    fn best_generation_prefers_the_earliest_tie() {
        let w = WeightMatrix::uniform(&["a".into(), "b".into()], 0.5);
        let rec = |i, acc| GenerationRecord {
            index: i,
            weights: w.clone(),
            val_accuracy: acc,
            pair_accuracies: IndexMap::new(),
            pair_gradients: IndexMap::new(),
            clamped: vec![],
            diverged: vec![],
            control_accuracy: None,
            params_ref: gen_params_file(i),
            optimizer: WeightOptState::new(0.05, 0.01, 0.1),
        };
        let rs = vec![rec(0, 0.4), rec(1, 0.6), rec(2, 0.6), rec(3, 0.5)];
        assert_eq!(best_generation(&rs), Some(1));
        assert_eq!(best_generation(&[]), None);
    }
}
