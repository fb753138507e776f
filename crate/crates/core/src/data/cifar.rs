use std::path::Path;

use super::{DataError, LabeledDataset};
use crate::engine::Tensor;

/// One label byte followed by a 32x32 image stored as three 1024-byte
/// planes (R, G, B), each row-major.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const CLASSES: usize = 10;

/// Decodes CIFAR-10 binary records into NHWC images scaled to [0, 1].
pub fn parse_cifar10(bytes: &[u8]) -> Result<LabeledDataset, DataError> {
    if bytes.is_empty() {
        return Err(DataError::Empty);
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(DataError::Truncated {
            bytes: bytes.len(),
            record: CIFAR_RECORD_BYTES,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PLANE * 3);
    for (index, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as u32;
        if label as usize >= CLASSES {
            return Err(DataError::Label {
                index,
                label,
                classes: CLASSES,
            });
        }
        labels.push(label);
        let planes = &rec[1..];
        for p in 0..PLANE {
            for c in 0..3 {
                data.push(planes[c * PLANE + p] as f32 / 255.0);
            }
        }
    }
    let images = Tensor::new(vec![n, SIDE, SIDE, 3], data).expect("sized");
    LabeledDataset::new(images, labels, CLASSES)
}

pub fn load_cifar10(path: &Path) -> Result<LabeledDataset, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_cifar10(&bytes)
}

/// Loads and concatenates several batch files in the given order.
pub fn load_cifar10_files(paths: &[impl AsRef<Path>]) -> Result<LabeledDataset, DataError> {
    let mut bytes = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let chunk = std::fs::read(p).map_err(|e| DataError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        if chunk.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(DataError::Truncated {
                bytes: chunk.len(),
                record: CIFAR_RECORD_BYTES,
            });
        }
        bytes.extend(chunk);
    }
    parse_cifar10(&bytes)
}

/// BT.601 full-range RGB to YUV with U and V shifted by +0.5 into [0, 1].
pub fn rgb_to_yuv(d: &LabeledDataset) -> Result<LabeledDataset, DataError> {
    let s = d.image_shape();
    if s.c != 3 {
        return Err(DataError::Channels {
            expected: 3,
            found: s.c,
        });
    }
    let mut out = Vec::with_capacity(d.images().len());
    for px in d.images().data().chunks_exact(3) {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        let u = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 0.5;
        let v = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 0.5;
        out.extend([y as f32, u as f32, v as f32]);
    }
    let images = Tensor::new(d.images().shape().to_vec(), out).expect("same shape");
    LabeledDataset::with_shared_labels(images, d.shared_labels().clone(), d.class_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: impl Fn(usize, usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        for c in 0..3 {
            for p in 0..PLANE {
                r.push(fill(c, p));
            }
        }
        r
    }

    #[test]
    fn two_records_decode() {
        let mut bytes = record(3, |c, p| ((c * 7 + p) % 256) as u8);
        bytes.extend(record(9, |_, _| 255));
        let d = parse_cifar10(&bytes).unwrap();
        assert_eq!(d.images().shape(), &[2, 32, 32, 3]);
        assert_eq!(d.labels(), &[3, 9]);
        // pixel (0, 1) of record 0: planes hold p=1 at offsets 1, 1025, 2049
        let px = &d.images().data()[3..6];
        assert_eq!(px, &[1.0 / 255.0, 8.0 / 255.0, 15.0 / 255.0]);
        assert!(d.images().data()[3072..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncation_and_bad_labels_are_errors() {
        let mut bytes = record(0, |_, _| 0);
        bytes.push(0);
        assert_eq!(bytes.len(), 3074);
        assert!(matches!(
            parse_cifar10(&bytes),
            Err(DataError::Truncated { .. })
        ));
        assert!(matches!(
            parse_cifar10(&record(10, |_, _| 0)),
            Err(DataError::Label { label: 10, .. })
        ));
    }

    fn one_pixel(r: f32, g: f32, b: f32) -> LabeledDataset {
        LabeledDataset::new(
            Tensor::new(vec![1, 1, 1, 3], vec![r, g, b]).unwrap(),
            vec![0],
            1,
        )
        .unwrap()
    }

    #[test]
    fn yuv_of_greys() {
        for (g, y) in [(1.0, 1.0), (0.0, 0.0), (0.37, 0.37)] {
            let d = rgb_to_yuv(&one_pixel(g, g, g)).unwrap();
            let px = d.images().data();
            assert!((px[0] - y).abs() < 1e-6, "{px:?}");
            assert!(
                (px[1] - 0.5).abs() < 1e-6 && (px[2] - 0.5).abs() < 1e-6,
                "{px:?}"
            );
        }
    }

    #[test]
    fn yuv_needs_three_channels() {
        let d = LabeledDataset::new(
            Tensor::new(vec![1, 1, 1, 1], vec![0.0]).unwrap(),
            vec![0],
            1,
        )
        .unwrap();
        assert_eq!(
            rgb_to_yuv(&d),
            Err(DataError::Channels {
                expected: 3,
                found: 1
            })
        );
    }
}
