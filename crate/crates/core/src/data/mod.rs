//! Datasets: CIFAR binary ingestion, colour transform, modality views,
//! per-class retention, stratified splitting and a synthetic multimodal
//! generator.
//!
//! Images are NHWC `f32` tensors. Label arrays sit behind an `Arc` so that
//! every modality view of one dataset shares the same labels.

mod cifar;
mod sampling;
mod synth;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Samples, Tensor};
use crate::ir::Shape3;

pub use cifar::{load_cifar10, load_cifar10_files, parse_cifar10, rgb_to_yuv, CIFAR_RECORD_BYTES};
pub use sampling::{
    retained_per_class, split_counts, subsample_indices, subsample_per_class, train_val_indices,
    train_val_split, Rows,
};
pub use synth::{synth_multimodal, SynthConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DataError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("truncated record: {bytes} bytes is not a multiple of {record}")]
    Truncated { bytes: usize, record: usize },
    #[error("record {index}: label {label} out of range for {classes} classes")]
    Label {
        index: usize,
        label: u32,
        classes: usize,
    },
    #[error("expected {expected} channels, found {found}")]
    Channels { expected: usize, found: usize },
    #[error("invalid modality specs: {0}")]
    Modality(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("class {class} has {count} example(s); at least 2 are needed to split")]
    ClassTooSmall { class: u32, count: usize },
    #[error("empty dataset")]
    Empty,
}

/// A named subset of channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub channel_indices: Vec<usize>,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, channels: &[usize]) -> Self {
        ModalitySpec {
            name: name.into(),
            channel_indices: channels.to_vec(),
        }
    }

    /// Y / U / V, one channel each, for a YUV-converted dataset.
    pub fn yuv() -> Vec<ModalitySpec> {
        vec![
            ModalitySpec::new("Y", &[0]),
            ModalitySpec::new("U", &[1]),
            ModalitySpec::new("V", &[2]),
        ]
    }
}

/// Images with integer labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    labels: Arc<Vec<u32>>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<u32>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        Self::with_shared_labels(images, Arc::new(labels), class_count)
    }

    pub fn with_shared_labels(
        images: Tensor<f32>,
        labels: Arc<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        check_labels(&images, &labels, class_count)?;
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn shared_labels(&self) -> &Arc<Vec<u32>> {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(h, w, c)` of one image.
    pub fn image_shape(&self) -> Shape3 {
        let s = self.images.shape();
        Shape3::new(s[1], s[2], s[3])
    }

    pub fn samples(&self) -> Samples<'_> {
        Samples {
            inputs: std::slice::from_ref(&self.images),
            labels: &self.labels,
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: self.images.gather_rows(indices),
            labels: Arc::new(indices.iter().map(|&i| self.labels[i]).collect()),
            class_count: self.class_count,
        }
    }

    /// Examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.class_count)
    }
}

/// Per-modality views of one dataset, in a fixed modality order, sharing
/// a single label array.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalDataset {
    names: Vec<String>,
    views: Vec<Tensor<f32>>,
    labels: Arc<Vec<u32>>,
    class_count: usize,
}

impl ModalDataset {
    pub fn new(
        names: Vec<String>,
        views: Vec<Tensor<f32>>,
        labels: Arc<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if names.len() != views.len() || names.is_empty() {
            return Err(DataError::Modality(
                "need one view per modality name and at least one modality".into(),
            ));
        }
        for v in &views {
            check_labels(v, &labels, class_count)?;
        }
        Ok(ModalDataset {
            names,
            views,
            labels,
            class_count,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn views(&self) -> &[Tensor<f32>] {
        &self.views
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn shared_labels(&self) -> &Arc<Vec<u32>> {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modality_count(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn view_shape(&self, i: usize) -> Shape3 {
        let s = self.views[i].shape();
        Shape3::new(s[1], s[2], s[3])
    }

    /// Single-modality dataset; shares the label array.
    pub fn view(&self, name: &str) -> Option<LabeledDataset> {
        let i = self.index_of(name)?;
        Some(LabeledDataset {
            images: self.views[i].clone(),
            labels: Arc::clone(&self.labels),
            class_count: self.class_count,
        })
    }

    /// All views as model inputs, in modality order.
    pub fn samples(&self) -> Samples<'_> {
        Samples {
            inputs: &self.views,
            labels: &self.labels,
        }
    }

    /// One view as a single-input sample set.
    pub fn view_samples(&self, i: usize) -> Samples<'_> {
        Samples {
            inputs: std::slice::from_ref(&self.views[i]),
            labels: &self.labels,
        }
    }

    /// Channel-concatenation of all views (the base CNN's input).
    pub fn stacked(&self) -> LabeledDataset {
        let n = self.len();
        let widths: Vec<usize> = (0..self.views.len())
            .map(|i| self.view_shape(i).c)
            .collect();
        let s = self.view_shape(0);
        let total: usize = widths.iter().sum();
        let positions = n * s.h * s.w;
        let mut data = Vec::with_capacity(positions * total);
        for p in 0..positions {
            for (v, &c) in self.views.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[p * c..(p + 1) * c]);
            }
        }
        LabeledDataset {
            images: Tensor::new(vec![n, s.h, s.w, total], data).expect("sized"),
            labels: Arc::clone(&self.labels),
            class_count: self.class_count,
        }
    }

    /// Rows at `indices` across every view; the views of the result share
    /// one new label array.
    pub fn select(&self, indices: &[usize]) -> ModalDataset {
        ModalDataset {
            names: self.names.clone(),
            views: self.views.iter().map(|v| v.gather_rows(indices)).collect(),
            labels: Arc::new(indices.iter().map(|&i| self.labels[i]).collect()),
            class_count: self.class_count,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.class_count)
    }
}

/// Restricts the channel axis to each spec, producing views that share the
/// dataset's labels.
pub fn split_modalities(
    d: &LabeledDataset,
    specs: &[ModalitySpec],
) -> Result<ModalDataset, DataError> {
    let shape = d.image_shape();
    let mut seen = vec![false; shape.c];
    let mut names: Vec<String> = Vec::new();
    for s in specs {
        if s.channel_indices.is_empty() {
            return Err(DataError::Modality(format!(
                "modality `{}` has no channels",
                s.name
            )));
        }
        if names.contains(&s.name) {
            return Err(DataError::Modality(format!(
                "duplicate modality `{}`",
                s.name
            )));
        }
        for &c in &s.channel_indices {
            if c >= shape.c {
                return Err(DataError::Modality(format!(
                    "modality `{}` uses channel {c} of {}",
                    s.name, shape.c
                )));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(DataError::Modality(format!(
                    "channel {c} claimed by more than one modality"
                )));
            }
        }
        names.push(s.name.clone());
    }
    let n = d.len();
    let positions = n * shape.h * shape.w;
    let src = d.images.data();
    let views = specs
        .iter()
        .map(|s| {
            let k = s.channel_indices.len();
            let mut data = Vec::with_capacity(positions * k);
            for p in 0..positions {
                let px = &src[p * shape.c..(p + 1) * shape.c];
                data.extend(s.channel_indices.iter().map(|&c| px[c]));
            }
            Tensor::new(vec![n, shape.h, shape.w, k], data).expect("sized")
        })
        .collect();
    ModalDataset::new(names, views, Arc::clone(&d.labels), d.class_count)
}

fn check_labels(images: &Tensor<f32>, labels: &[u32], class_count: usize) -> Result<(), DataError> {
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    if images.shape().len() != 4 || images.batch() != labels.len() {
        return Err(DataError::Argument(format!(
            "images {:?} do not match {} labels",
            images.shape(),
            labels.len()
        )));
    }
    if let Some((index, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= class_count)
    {
        return Err(DataError::Label {
            index,
            label,
            classes: class_count,
        });
    }
    Ok(())
}

pub(crate) fn class_counts(labels: &[u32], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0; class_count];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}
