use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    mix_seed, AdamConfig, AdamState, EngineError, ExecutableModel, ForwardOptions, Scalar, Tensor,
};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("adam epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Borrowed view of a labeled dataset: one NHWC tensor per model input,
/// all with the same row count as `labels`.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub inputs: &'a [Tensor<f32>],
    pub labels: &'a [u32],
}

impl<'a> Samples<'a> {
    pub fn new(inputs: &'a [Tensor<f32>], labels: &'a [u32]) -> Result<Self, EngineError> {
        if labels.is_empty() {
            return Err(EngineError::EmptyDataset);
        }
        for t in inputs {
            if t.batch() != labels.len() {
                return Err(EngineError::ShapeMismatch(format!(
                    "{} labels but an input tensor has {} rows",
                    labels.len(),
                    t.batch()
                )));
            }
        }
        Ok(Samples { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather<T: Scalar>(&self, rows: &[usize]) -> (Vec<Tensor<T>>, Vec<u32>) {
        let inputs = self.inputs.iter().map(|t| t.gather_rows_as(rows)).collect();
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        (inputs, labels)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy on the training batches as seen during the epoch (dropout on).
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    /// Highest validation accuracy over all epochs and the epoch reaching it
    /// first.
    pub fn best_val(&self) -> Option<(usize, f64)> {
        self.epochs
            .iter()
            .filter_map(|e| e.val_accuracy.map(|a| (e.epoch, a)))
            .fold(None, |best, (e, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((e, a)),
            })
    }

    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_accuracy)
    }
}

/// Trains in place with minibatch Adam on mean cross-entropy.
///
/// Batch order comes from `(seed, epoch)` and dropout masks from
/// `(seed, step)`, so equal inputs give byte-identical results. When
/// `val` is given it is evaluated after every epoch.
pub fn train<T: Scalar>(
    model: &mut ExecutableModel<T>,
    data: Samples<'_>,
    val: Option<Samples<'_>>,
    cfg: &TrainConfig,
) -> Result<History, EngineError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let adam = cfg.adam();
    let mut state = AdamState::new();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for rows in order.chunks(cfg.batch_size) {
            let (inputs, labels) = data.gather::<T>(rows);
            let opts = ForwardOptions::train(mix_seed(cfg.seed ^ 0x9e37_79b9, step));
            let (loss, grads, tape) = model.loss_and_gradients(&inputs, &labels, opts)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(EngineError::Diverged { epoch });
            }
            loss_sum += loss * rows.len() as f64;
            correct += count_correct(
                tape.logits(model.program()).data(),
                &labels,
                model.classes(),
            );
            model.update_batchnorm_stats(&tape);
            state.step(model.params_mut(), &grads, &adam);
            step += 1;
        }
        let val_accuracy = match val {
            Some(v) => Some(evaluate(model, v)?),
            None => None,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} val {:?}",
            loss_sum / data.len() as f64,
            val_accuracy
        );
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Argmax predictions in eval mode; ties go to the lowest class index.
pub fn predict<T: Scalar>(
    model: &ExecutableModel<T>,
    data: Samples<'_>,
) -> Result<Vec<u32>, EngineError> {
    if data.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let classes = model.classes();
    let mut out = Vec::with_capacity(data.len());
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(EVAL_BATCH) {
        let (inputs, _) = data.gather::<T>(chunk);
        let logits = model.forward(&inputs)?;
        out.extend(logits.data().chunks(classes).map(argmax));
    }
    Ok(out)
}

/// Fraction of samples whose eval-mode argmax matches the label.
pub fn evaluate<T: Scalar>(
    model: &ExecutableModel<T>,
    data: Samples<'_>,
) -> Result<f64, EngineError> {
    let pred = predict(model, data)?;
    let hits = pred.iter().zip(data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

fn argmax<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

fn count_correct<T: Scalar>(logits: &[T], labels: &[u32], classes: usize) -> usize {
    logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}
