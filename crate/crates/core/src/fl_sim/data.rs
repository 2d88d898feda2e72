//! IDX-format datasets and input standardization.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Labeled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Dataset(format!(
                "{} features for {} labels of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Dataset(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { features, labels, dim, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Scalar mean and standard deviation over all features.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.features.len() as f64;
        let mean = self.features.iter().sum::<f64>() / n;
        let var = self.features.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// `(x - mean) / std` in place; a zero `std` only centers.
    pub fn standardize(&mut self, mean: f64, std: f64) {
        let s = if std > 0.0 { std } else { 1.0 };
        self.features.iter_mut().for_each(|x| *x = (*x - mean) / s);
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated { needed: at + 4, got: bytes.len() })
}

/// Parses an IDX3 image file into `(count, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadHeader(format!("image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let dim = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let needed = 16 + count * dim;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, got: bytes.len() });
    }
    Ok((count, dim, bytes[16..needed].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadHeader(format!("label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, got: bytes.len() });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]`.
pub fn load_idx_pair(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let read = |p: &Path| fs::read(p).map_err(|e| Error::Dataset(format!("{}: {e}", p.display())));
    let (count, dim, pixels) = parse_idx_images(&read(images)?)?;
    let labels = parse_idx_labels(&read(labels)?)?;
    if labels.len() != count {
        return Err(Error::Dataset(format!("{count} images but {} labels", labels.len())));
    }
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(features, labels, dim, classes)
}

/// MNIST train and test sets from `dir`, both standardized with the training moments.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = load_idx_pair(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS), 10)?;
    let mut test = load_idx_pair(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS), 10)?;
    let (mean, std) = train.moments();
    train.standardize(mean, std);
    test.standardize(mean, std);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, data: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn parses_images_and_labels() {
        let bytes = idx_images(2, 1, 2, &[0, 255, 10, 20]);
        let (n, d, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, d, px), (2, 2, vec![0, 255, 10, 20]));
        let mut lb = Vec::new();
        lb.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lb.extend_from_slice(&2u32.to_be_bytes());
        lb.extend_from_slice(&[7, 1]);
        assert_eq!(parse_idx_labels(&lb).unwrap(), vec![7, 1]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = idx_images(2, 1, 2, &[0, 1, 2, 3]);
        assert!(matches!(parse_idx_images(&bytes[..18]), Err(Error::Truncated { .. })));
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::BadHeader(_))));
    }

    #[test]
    fn standardization_zero_mean_unit_std() {
        let mut d = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], vec![0, 1], 2, 2).unwrap();
        let (m, s) = d.moments();
        d.standardize(m, s);
        let (m2, s2) = d.moments();
        assert!(m2.abs() < 1e-12 && (s2 - 1.0).abs() < 1e-12);
    }
}
