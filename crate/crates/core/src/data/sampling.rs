use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{class_counts, DataError, LabeledDataset, ModalDataset};

/// Anything that can be reduced to a subset of its rows.
pub trait Rows: Sized {
    fn row_labels(&self) -> &[u32];
    fn classes(&self) -> usize;
    fn take(&self, indices: &[usize]) -> Self;
}

impl Rows for LabeledDataset {
    fn row_labels(&self) -> &[u32] {
        self.labels()
    }
    fn classes(&self) -> usize {
        self.class_count()
    }
    fn take(&self, indices: &[usize]) -> Self {
        self.select(indices)
    }
}

impl Rows for ModalDataset {
    fn row_labels(&self) -> &[u32] {
        self.labels()
    }
    fn classes(&self) -> usize {
        self.class_count()
    }
    fn take(&self, indices: &[usize]) -> Self {
        self.select(indices)
    }
}

/// `⌈p/100 · count⌉`; a retained class is never emptied.
pub fn retained_per_class(count: usize, p: f64) -> usize {
    // p·count is exact for integral p, so the ceiling does not round up
    // spuriously on values such as 20% of 100.
    let exact = p * count as f64 / 100.0;
    (exact.ceil() as usize).min(count)
}

/// `(train, val)` sizes for one class: `round(fraction · count)` clamped so
/// both sides keep at least one example.
pub fn split_counts(count: usize, fraction: f64) -> (usize, usize) {
    let train = ((fraction * count as f64).round() as usize).clamp(1, count - 1);
    (train, count - train)
}

fn by_class(labels: &[u32], classes: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l as usize].push(i);
    }
    groups
}

/// Ascending row indices kept by [`subsample_per_class`].
pub fn subsample_indices(
    labels: &[u32],
    classes: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<usize>, DataError> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(DataError::Argument(format!(
            "retention {p}% outside (0, 100]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for mut group in by_class(labels, classes) {
        let k = retained_per_class(group.len(), p);
        group.shuffle(&mut rng);
        keep.extend_from_slice(&group[..k]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Keeps `⌈p/100 · count⌉` examples of every class, chosen by a seeded
/// shuffle; survivors keep their original relative order.
pub fn subsample_per_class<D: Rows>(d: &D, p: f64, seed: u64) -> Result<D, DataError> {
    let keep = subsample_indices(d.row_labels(), d.classes(), p, seed)?;
    Ok(d.take(&keep))
}

/// Stratified `(train, val)` row indices, each ascending.
pub fn train_val_indices(
    labels: &[u32],
    classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Argument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    for (class, &count) in class_counts(labels, classes).iter().enumerate() {
        if count == 1 {
            return Err(DataError::ClassTooSmall {
                class: class as u32,
                count,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut group in by_class(labels, classes) {
        if group.is_empty() {
            continue;
        }
        let (k, _) = split_counts(group.len(), fraction);
        group.shuffle(&mut rng);
        train.extend_from_slice(&group[..k]);
        val.extend_from_slice(&group[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Stratified split: every class contributes `round(fraction · count)`
/// examples to train and the rest to validation.
pub fn train_val_split<D: Rows>(d: &D, fraction: f64, seed: u64) -> Result<(D, D), DataError> {
    let (train, val) = train_val_indices(d.row_labels(), d.classes(), fraction, seed)?;
    Ok((d.take(&train), d.take(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;

    fn balanced(per_class: usize, classes: usize) -> LabeledDataset {
        let n = per_class * classes;
        let labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
        let data: Vec<f32> = (0..n).map(|i| i as f32).collect();
        LabeledDataset::new(
            Tensor::new(vec![n, 1, 1, 1], data).unwrap(),
            labels,
            classes,
        )
        .unwrap()
    }

    #[test]
    fn full_retention_is_identity() {
        let d = balanced(7, 3);
        assert_eq!(subsample_per_class(&d, 100.0, 5).unwrap(), d);
    }

    #[test]
    fn twenty_percent_of_a_hundred_per_class() {
        let d = balanced(100, 10);
        let s = subsample_per_class(&d, 20.0, 1).unwrap();
        assert_eq!(s.class_counts(), vec![20; 10]);
        assert_eq!(s, subsample_per_class(&d, 20.0, 1).unwrap());
        assert_ne!(s, subsample_per_class(&d, 20.0, 2).unwrap());
    }

    #[test]
    fn retention_rounds_up() {
        assert_eq!(retained_per_class(3, 10.0), 1);
        assert_eq!(retained_per_class(10, 25.0), 3);
        assert_eq!(retained_per_class(0, 50.0), 0);
        let d = balanced(1, 2);
        assert!(subsample_per_class(&d, 0.0, 0).is_err());
        assert!(subsample_per_class(&d, 100.5, 0).is_err());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let d = balanced(10, 10);
        let (ti, vi) = train_val_indices(d.labels(), 10, 0.8, 3).unwrap();
        assert_eq!((ti.len(), vi.len()), (80, 20));
        let (train, val) = train_val_split(&d, 0.8, 3).unwrap();
        assert_eq!(train.class_counts(), vec![8; 10]);
        assert_eq!(val.class_counts(), vec![2; 10]);
        let mut all: Vec<usize> = ti.iter().chain(&vi).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train_val_indices(d.labels(), 10, 0.8, 3).unwrap(), (ti, vi));
    }

    #[test]
    fn tiny_classes_cannot_be_split() {
        let labels = [0, 0, 1];
        assert_eq!(
            train_val_indices(&labels, 2, 0.8, 0),
            Err(DataError::ClassTooSmall { class: 1, count: 1 })
        );
        assert_eq!(split_counts(2, 0.8), (1, 1));
        assert_eq!(split_counts(10, 0.99), (9, 1));
    }
}
