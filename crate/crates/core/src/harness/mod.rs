//! Experiment harness behind the command-line subcommands: configuration,
//! data preparation, retention sweeps over seeds, and report tables.

mod commands;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar10_files, rgb_to_yuv, split_modalities, synth_multimodal, train_val_indices,
    DataError, LabeledDataset, ModalDataset, ModalitySpec, SynthConfig,
};
use crate::engine::{EngineError, TrainConfig};
use crate::ir::{zoo, Blueprint, IrError, Shape3};
use crate::iterative::{IterConfig, IterError};
use crate::xtransform::{TransformConfig, TransformError};

pub use commands::{
    cmd_iterate, cmd_probe, cmd_report, cmd_train, cmd_transform, MetricRow, Prepared,
    EFFECTIVE_CONFIG_FILE, HISTORY_FILE, METRICS_FILE,
};
pub use report::{ci95, render_table, summarize, SummaryRow, REPORT_FILE, SUMMARY_FILE};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Training(_) => 4,
            HarnessError::Io(_) => 5,
        }
    }
}

impl From<DataError> for HarnessError {
    fn from(e: DataError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<IrError> for HarnessError {
    fn from(e: IrError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Io(e) => HarnessError::Io(e.to_string()),
            EngineError::InvalidConfig(m) => HarnessError::Config(m),
            EngineError::Ir(e) => e.into(),
            e => HarnessError::Training(e.to_string()),
        }
    }
}

impl From<TransformError> for HarnessError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::Ir(e) => e.into(),
            TransformError::Data(e) => e.into(),
            TransformError::Config(m) => HarnessError::Config(m),
            e @ (TransformError::Probe { .. } | TransformError::DegenerateScore { .. }) => {
                HarnessError::Training(e.to_string())
            }
        }
    }
}

impl From<IterError> for HarnessError {
    fn from(e: IterError) -> Self {
        match e {
            IterError::Transform(e) => e.into(),
            IterError::Engine(e) => e.into(),
            IterError::Ir(e) => e.into(),
            IterError::Data(e) => e.into(),
            IterError::Config(m) => HarnessError::Config(m),
            e @ (IterError::Io { .. } | IterError::Resume { .. }) => {
                HarnessError::Io(e.to_string())
            }
        }
    }
}

pub(crate) fn io_error(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    /// CIFAR-10 binary batches. Without `test_files` a stratified
    /// `test_fraction` of the training files is held out instead.
    Cifar10 {
        train_files: Vec<PathBuf>,
        #[serde(default)]
        test_files: Vec<PathBuf>,
    },
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(flatten)]
        synth: SynthConfig,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

/// `"yuv"` or an explicit channel grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModalitiesConfig {
    Named(String),
    Explicit(Vec<ModalitySpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Base network document; the built-in desk CNN when absent.
    pub blueprint_path: Option<PathBuf>,
    pub dataset: DatasetConfig,
    /// Defaults to `"yuv"` for CIFAR and to the generator's own modalities
    /// for synthetic data.
    pub modalities: Option<ModalitiesConfig>,
    /// Per-class retention percentages of the training pool.
    pub retention_p: Vec<f64>,
    /// Held-out share when the dataset has no separate test set.
    pub test_fraction: f64,
    pub transform: TransformConfig,
    pub train: TrainConfig,
    pub iterative: Option<IterConfig>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Concurrent seed/retention runs; all cores when absent.
    pub parallel: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            blueprint_path: None,
            dataset: DatasetConfig::default(),
            modalities: None,
            retention_p: vec![20.0, 40.0, 60.0, 80.0, 100.0],
            test_fraction: 0.2,
            transform: TransformConfig::default(),
            train: TrainConfig::default(),
            iterative: None,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs"),
            parallel: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.retention_p.is_empty() {
            return bad("retention_p is empty".into());
        }
        if let Some(p) = self
            .retention_p
            .iter()
            .find(|p| !(**p > 0.0 && **p <= 100.0))
        {
            return bad(format!("retention {p} outside (0, 100]"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            ));
        }
        if self.parallel == Some(0) {
            return bad("parallel must be at least 1".into());
        }
        self.transform.validate()?;
        self.train.validate()?;
        if let Some(i) = &self.iterative {
            i.validate()?;
        }
        if let DatasetConfig::Synthetic { synth, .. } = &self.dataset {
            synth
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Keeps only `seed` for this run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }

    /// The base network, loaded or built for the dataset's shape.
    pub fn blueprint(&self, input: Shape3, classes: usize) -> Result<Blueprint, HarnessError> {
        match &self.blueprint_path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                let b = Blueprint::from_json(&text)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                let out = b.output_shape();
                if out.len() != classes {
                    return Err(HarnessError::Config(format!(
                        "{} ends in {} outputs but the data has {classes} classes",
                        p.display(),
                        out.len()
                    )));
                }
                Ok(b)
            }
            None => Ok(zoo::desk_cnn(input, classes)),
        }
    }

    /// Loads the dataset, converts colour if asked, splits off the test set
    /// and groups channels into modalities.
    pub fn prepare(&self) -> Result<Prepared, HarnessError> {
        let (raw_train, raw_test, default_specs) = match &self.dataset {
            DatasetConfig::Cifar10 {
                train_files,
                test_files,
            } => {
                if train_files.is_empty() {
                    return Err(HarnessError::Config("dataset.train_files is empty".into()));
                }
                let train = load_cifar10_files(train_files)?;
                let test = if test_files.is_empty() {
                    None
                } else {
                    Some(load_cifar10_files(test_files)?)
                };
                (train, test, None)
            }
            DatasetConfig::Synthetic { seed, synth } => {
                let (d, specs) = synth_multimodal(synth, *seed)?;
                (d, None, Some(specs))
            }
        };
        let (specs, yuv) = match (&self.modalities, default_specs) {
            (Some(ModalitiesConfig::Named(n)), _) if n.eq_ignore_ascii_case("yuv") => {
                (ModalitySpec::yuv(), true)
            }
            (Some(ModalitiesConfig::Named(n)), _) => {
                return Err(HarnessError::Config(format!(
                    "unknown modality preset `{n}`"
                )))
            }
            (Some(ModalitiesConfig::Explicit(v)), _) => (v.clone(), false),
            (None, Some(specs)) => (specs, false),
            (None, None) => (ModalitySpec::yuv(), true),
        };
        let convert = |d: LabeledDataset| if yuv { rgb_to_yuv(&d) } else { Ok(d) };
        let raw_train = convert(raw_train)?;
        let (train, test) = match raw_test {
            Some(t) => (raw_train, convert(t)?),
            None => {
                let (ti, vi) = train_val_indices(
                    raw_train.labels(),
                    raw_train.class_count(),
                    1.0 - self.test_fraction,
                    0,
                )?;
                (raw_train.select(&ti), raw_train.select(&vi))
            }
        };
        Ok(Prepared {
            train: split_modalities(&train, &specs)?,
            test: split_modalities(&test, &specs)?,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.parallel {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Shape of the channel-stacked input of a modal dataset.
pub(crate) fn stacked_shape(d: &ModalDataset) -> Shape3 {
    let first = d.view_shape(0);
    let c = (0..d.modality_count()).map(|i| d.view_shape(i).c).sum();
    Shape3::new(first.h, first.w, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_the_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn tagged_dataset_sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            modalities = "yuv"
            [dataset]
            kind = "cifar10"
            train_files = ["a.bin", "b.bin"]
            "#,
        )
        .unwrap();
        assert!(
            matches!(cfg.dataset, DatasetConfig::Cifar10 { ref train_files, .. } if train_files.len() == 2)
        );
        let cfg = ExperimentConfig::from_toml(
            r#"
            [dataset]
            kind = "synthetic"
            n = 300
            strengths = [1.0, 0.0]
            "#,
        )
        .unwrap();
        match cfg.dataset {
            DatasetConfig::Synthetic { synth, .. } => {
                assert_eq!(
                    (synth.n, synth.strengths.len(), synth.classes),
                    (300, 2, 10)
                )
            }
            _ => panic!("expected synthetic"),
        }
    }

    #[test]
    fn bad_values_are_config_errors() {
        for doc in [
            "seeds = []",
            "retention_p = [0.0]",
            "retention_p = [120.0]",
            "unknown_key = 1",
            "[transform]\nalpha = -1.0",
            "[train]\nepochs = 0",
            "[iterative]\ngenerations = 1",
        ] {
            let e = ExperimentConfig::from_toml(doc).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{doc}: {e}");
        }
    }

    #[test]
    fn missing_cifar_file_is_a_data_error() {
        let cfg = ExperimentConfig {
            dataset: DatasetConfig::Cifar10 {
                train_files: vec!["/nonexistent/data_batch_1.bin".into()],
                test_files: vec![],
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.prepare().unwrap_err().exit_code(), 3);
    }
}
