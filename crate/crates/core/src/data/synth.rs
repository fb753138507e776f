use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset, ModalitySpec};
use crate::engine::{mix_seed, Tensor};

/// Synthetic task: every modality is one channel holding a class template
/// scaled by the modality's signal strength, plus Gaussian noise.
///
/// All modalities of a sample share one random circular shift of up to
/// `max_shift` pixels, so a strong modality also tells where to look in a
/// weak one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub strengths: Vec<f64>,
    pub noise_sigma: f64,
    pub max_shift: usize,
    /// Modality names; defaults to `m0, m1, ...`.
    pub names: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            classes: 10,
            height: 12,
            width: 12,
            strengths: vec![1.0, 0.3, 0.0],
            noise_sigma: 1.0,
            max_shift: 2,
            names: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn modality_names(&self) -> Vec<String> {
        if self.names.is_empty() {
            (0..self.strengths.len()).map(|i| format!("m{i}")).collect()
        } else {
            self.names.clone()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Argument(m));
        if self.n == 0 {
            return Err(DataError::Empty);
        }
        if self.classes < 2 {
            return bad("synthetic task needs at least 2 classes".into());
        }
        if self.height == 0 || self.width == 0 {
            return bad("synthetic images need positive height and width".into());
        }
        if self.strengths.is_empty() {
            return bad("at least one modality strength is required".into());
        }
        if let Some(s) = self.strengths.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return bad(format!("signal strength {s} outside [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise sigma {} must be non-negative",
                self.noise_sigma
            ));
        }
        if !self.names.is_empty() && self.names.len() != self.strengths.len() {
            return bad("one name per modality strength".into());
        }
        Ok(())
    }
}

/// Generates the dataset (one channel per modality, in config order) and
/// the matching one-channel modality specs.
pub fn synth_multimodal(
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(LabeledDataset, Vec<ModalitySpec>), DataError> {
    cfg.validate()?;
    let (h, w, m) = (cfg.height, cfg.width, cfg.strengths.len());
    let plane = h * w;

    // templates[modality][class] is a unit-RMS random image
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let templates: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            (0..cfg.classes)
                .map(|_| {
                    let mut t: Vec<f64> = (0..plane)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let rms = (t.iter().map(|v| v * v).sum::<f64>() / plane as f64).sqrt();
                    t.iter_mut().for_each(|v| *v /= rms.max(1e-12));
                    t
                })
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut labels: Vec<u32> = (0..cfg.n).map(|i| (i % cfg.classes) as u32).collect();
    labels.shuffle(&mut rng);
    let shift = cfg.max_shift as i64;
    let mut data = Vec::with_capacity(cfg.n * plane * m);
    for &label in &labels {
        let dy = rng.random_range(-shift..=shift);
        let dx = rng.random_range(-shift..=shift);
        for y in 0..h {
            let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
            for x in 0..w {
                let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
                for (k, s) in cfg.strengths.iter().enumerate() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let v = s * templates[k][label as usize][sy * w + sx] + cfg.noise_sigma * noise;
                    data.push(v as f32);
                }
            }
        }
    }
    let images = Tensor::new(vec![cfg.n, h, w, m], data).expect("sized");
    let specs = cfg
        .modality_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| ModalitySpec::new(name, &[i]))
        .collect();
    Ok((LabeledDataset::new(images, labels, cfg.classes)?, specs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig {
            n: 50,
            ..SynthConfig::default()
        };
        let (a, sa) = synth_multimodal(&cfg, 3).unwrap();
        let (b, _) = synth_multimodal(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_multimodal(&cfg, 4).unwrap().0);
        assert_eq!(a.image_shape(), crate::ir::Shape3::new(12, 12, 3));
        assert_eq!(sa.len(), 3);
        assert_eq!(a.class_counts(), vec![5; 10]);
    }

    #[test]
    fn zero_strength_channel_is_pure_noise() {
        let cfg = SynthConfig {
            n: 400,
            strengths: vec![1.0, 0.0],
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let (d, _) = synth_multimodal(&cfg, 1).unwrap();
        // with no noise the second channel is exactly zero
        assert!(d
            .images()
            .data()
            .iter()
            .skip(1)
            .step_by(2)
            .all(|&v| v == 0.0));
        assert!(d.images().data().iter().step_by(2).any(|&v| v != 0.0));
    }

    #[test]
    fn strengths_are_range_checked() {
        let cfg = SynthConfig {
            strengths: vec![1.2],
            ..SynthConfig::default()
        };
        assert!(synth_multimodal(&cfg, 0).is_err());
    }
}
