use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{render_table, summarize, write_summary, REPORT_FILE, SUMMARY_FILE};
use super::{io_error, stacked_shape, ExperimentConfig, HarnessError};
use crate::data::{subsample_per_class, train_val_split, ModalDataset};
use crate::engine::{container, evaluate, train, ExecutableModel, History, TrainConfig};
use crate::ir::XBlueprint;
use crate::iterative::{iterate, RunControl};
use crate::xtransform::{
    measure_informativeness, modal_inputs, stacked_base, transform, TransformConfig,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const EFFECTIVE_CONFIG_FILE: &str = "config.effective.toml";

/// Training pool and held-out test set, both split into modalities.
#[derive(Debug)]
pub struct Prepared {
    pub train: ModalDataset,
    pub test: ModalDataset,
}

/// One trained model evaluated on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub retention: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub parameters: usize,
}

#[derive(Debug, Clone, Serialize)]
struct HistoryRow {
    model: String,
    retention: f64,
    seed: u64,
    epoch: usize,
    train_loss: f64,
    train_accuracy: f64,
    val_accuracy: f64,
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Creates the output directory and echoes the effective configuration.
fn start(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    cfg.validate()?;
    create_dir(out)?;
    write(&out.join(EFFECTIVE_CONFIG_FILE), &cfg.to_toml())
}

fn seeded_transform(cfg: &ExperimentConfig, seed: u64) -> TransformConfig {
    TransformConfig {
        seed,
        ..cfg.transform.clone()
    }
}

fn seeded_train(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.train }
}

/// Probes every modality on the full training pool with the first seed and
/// writes `informativeness.json`.
pub fn cmd_probe(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, HarnessError> {
    start(cfg, out)?;
    let data = cfg.prepare()?;
    let seed = cfg.seeds[0];
    let b = cfg.blueprint(stacked_shape(&data.train), data.train.class_count())?;
    let report = cfg.pool()?.install(|| {
        measure_informativeness(
            &b,
            &data.train,
            &seeded_transform(cfg, seed),
            &seeded_train(cfg, seed),
        )
    })?;
    let path = out.join("informativeness.json");
    write(
        &path,
        &(serde_json::to_string_pretty(&report).expect("plain data") + "\n"),
    )?;
    Ok(path)
}

/// Probes, then writes the cross-modal blueprint, the transform report and
/// the channel-stacked base blueprint.
pub fn cmd_transform(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, HarnessError> {
    start(cfg, out)?;
    let data = cfg.prepare()?;
    let seed = cfg.seeds[0];
    let b = cfg.blueprint(stacked_shape(&data.train), data.train.class_count())?;
    let t = cfg.pool()?.install(|| {
        transform(
            &b,
            &data.train,
            &seeded_transform(cfg, seed),
            &seeded_train(cfg, seed),
        )
    })?;
    let path = out.join("xblueprint.json");
    write(&path, &t.xblueprint.to_json())?;
    write(&out.join("transform_report.json"), &t.report.to_json())?;
    write(
        &out.join("informativeness.json"),
        &(serde_json::to_string_pretty(&t.informativeness).expect("plain data") + "\n"),
    )?;
    write(
        &out.join("base_blueprint.json"),
        &stacked_base(&b, &modal_inputs(&data.train))?.to_json(),
    )?;
    Ok(path)
}

struct RunResult {
    metrics: Vec<MetricRow>,
    history: Vec<HistoryRow>,
}

fn history_rows(model: &str, retention: f64, seed: u64, h: &History) -> Vec<HistoryRow> {
    h.epochs
        .iter()
        .map(|e| HistoryRow {
            model: model.into(),
            retention,
            seed,
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_accuracy: e.train_accuracy,
            val_accuracy: e.val_accuracy.unwrap_or(f64::NAN),
        })
        .collect()
}

/// One retention point and seed: subsample, transform (unless a fixed
/// cross-modal blueprint is given), then train and test the cross-modal
/// network and the channel-stacked base.
fn run_one(
    cfg: &ExperimentConfig,
    data: &Prepared,
    fixed: Option<&XBlueprint>,
    p: f64,
    seed: u64,
    dir: &Path,
) -> Result<RunResult, HarnessError> {
    create_dir(dir)?;
    let pool = subsample_per_class(&data.train, p, seed)?;
    let b = cfg.blueprint(stacked_shape(&pool), pool.class_count())?;
    let tc = seeded_train(cfg, seed);
    let x = match fixed {
        Some(x) => x.clone(),
        None => transform(&b, &pool, &seeded_transform(cfg, seed), &tc)?.xblueprint,
    };
    write(&dir.join("xblueprint.json"), &x.to_json())?;
    let (fit, val) = train_val_split(&pool, cfg.transform.internal_split, seed)?;

    let mut xm = ExecutableModel::<f32>::from_xblueprint(&x, seed)?;
    let hx = train(&mut xm, fit.samples(), Some(val.samples()), &tc)?;
    let ax = evaluate(&xm, data.test.samples())?;
    container::save_params(xm.params(), &dir.join("xcnn.params"))?;

    let base = stacked_base(&b, &modal_inputs(&pool))?;
    let (fit_s, val_s, test_s) = (fit.stacked(), val.stacked(), data.test.stacked());
    let mut bm = ExecutableModel::<f32>::from_blueprint(&base, seed)?;
    let hb = train(&mut bm, fit_s.samples(), Some(val_s.samples()), &tc)?;
    let ab = evaluate(&bm, test_s.samples())?;
    container::save_params(bm.params(), &dir.join("base.params"))?;
    log::info!("p={p} seed={seed}: xcnn {ax:.4} base {ab:.4}");

    let row = |model: &str, acc, h: &History, parameters| {
        let (best_epoch, best_val_accuracy) = h.best_val().unwrap_or((0, f64::NAN));
        MetricRow {
            model: model.into(),
            retention: p,
            seed,
            test_accuracy: acc,
            best_val_accuracy,
            best_epoch,
            parameters,
        }
    };
    let mut history = history_rows("xcnn", p, seed, &hx);
    history.extend(history_rows("base", p, seed, &hb));
    Ok(RunResult {
        metrics: vec![
            row("xcnn", ax, &hx, x.parameter_count()),
            row("base", ab, &hb, base.parameter_count()),
        ],
        history,
    })
}

/// Retention sweep over all seeds. Writes `metrics.csv`, `history.csv`,
/// per-run blueprints and parameter containers, and the summary tables.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    xblueprint: Option<&Path>,
) -> Result<Vec<MetricRow>, HarnessError> {
    start(cfg, out)?;
    let fixed = match xblueprint {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
            Some(
                XBlueprint::from_json(&text)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let data = cfg.prepare()?;
    let jobs: Vec<(f64, u64)> = cfg
        .retention_p
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Result<RunResult, HarnessError>> = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| {
                let dir = out.join("runs").join(format!("p{p}_s{s}"));
                run_one(cfg, &data, fixed.as_ref(), p, s, &dir)
            })
            .collect()
    });
    let mut metrics = Vec::new();
    let mut history = Vec::new();
    for r in results {
        let r = r?;
        metrics.extend(r.metrics);
        history.extend(r.history);
    }
    write_csv(&out.join(METRICS_FILE), &metrics)?;
    write_csv(&out.join(HISTORY_FILE), &history)?;
    let summary = summarize(&metrics);
    write_summary(&out.join(SUMMARY_FILE), &summary)?;
    write(&out.join(REPORT_FILE), &render_table(&summary))?;
    Ok(metrics)
}

/// Iterative refinement with the first seed on the full training pool.
/// The run directory `out/iterate` holds the trajectory and per-generation
/// files and makes the run resumable.
pub fn cmd_iterate(
    cfg: &ExperimentConfig,
    out: &Path,
    stop_after: Option<usize>,
) -> Result<Option<MetricRow>, HarnessError> {
    start(cfg, out)?;
    let data = cfg.prepare()?;
    let seed = cfg.seeds[0];
    let b = cfg.blueprint(stacked_shape(&data.train), data.train.class_count())?;
    let ic = crate::iterative::IterConfig {
        seed,
        ..cfg.iterative.clone().unwrap_or_default()
    };
    let run = RunControl {
        dir: Some(out.join("iterate")),
        stop_after,
    };
    let it = cfg.pool()?.install(|| {
        iterate(
            &b,
            &data.train,
            &seeded_transform(cfg, seed),
            &ic,
            &seeded_train(cfg, seed),
            &run,
        )
    })?;
    if !it.complete {
        return Ok(None);
    }
    write(&out.join("final.xblueprint.json"), &it.xblueprint.to_json())?;
    container::save_params(it.model.params(), &out.join("final.params"))?;
    let best = it.best_record();
    let row = MetricRow {
        model: "xcnn-iterative".into(),
        retention: 100.0,
        seed,
        test_accuracy: evaluate(&it.model, data.test.samples())?,
        best_val_accuracy: best.val_accuracy,
        best_epoch: best.index,
        parameters: it.xblueprint.parameter_count(),
    };
    write_csv(&out.join(METRICS_FILE), std::slice::from_ref(&row))?;
    Ok(Some(row))
}

/// Rebuilds the summary tables from the `metrics.csv` files in `dir` and
/// its immediate subdirectories.
pub fn cmd_report(dir: &Path) -> Result<String, HarnessError> {
    let mut files = Vec::new();
    if dir.join(METRICS_FILE).is_file() {
        files.push(dir.join(METRICS_FILE));
    }
    if let Ok(entries) = fs::read_dir(dir) {
        let mut subs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join(METRICS_FILE)))
            .filter(|p| p.is_file())
            .collect();
        subs.sort();
        files.extend(subs);
    }
    if files.is_empty() {
        return Err(HarnessError::Config(format!(
            "no {METRICS_FILE} under {}",
            dir.display()
        )));
    }
    let mut rows: Vec<MetricRow> = Vec::new();
    for f in &files {
        let mut r = csv::Reader::from_path(f).map_err(|e| io_error(f, e))?;
        for row in r.deserialize() {
            rows.push(row.map_err(|e| HarnessError::Data(format!("{}: {e}", f.display())))?);
        }
    }
    let summary = summarize(&rows);
    write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    let table = render_table(&summary);
    write(&dir.join(REPORT_FILE), &table)?;
    Ok(table)
}
