//! Datasets and every on-disk format: IDX and CIFAR-10 readers, the EMIW
//! weight container, network spec files and line-delimited experiment logs.

mod idx;
pub mod log;
mod spec;
mod weights;

pub use idx::{load_cifar_bin, load_idx, read_cifar_bin, read_idx_images, read_idx_labels};
pub use log::{append_events, append_record, read_logs, LogEvent, LogRead};
pub use spec::{parse_network_spec, read_network_spec, write_network_spec, NetworkSpec};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, EMIW_MAGIC, EMIW_VERSION};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("parse error{}{}: {message}", .line.map(|l| format!(" on line {l}")).unwrap_or_default(), .field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        DataError::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `samples × dim`.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::format(
                0,
                format!("{} feature rows for {} labels", features.nrows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::format(0, format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            self.features = self.features.slice_move(ndarray::s![..n, ..]);
            self.labels.truncate(n);
        }
        self
    }

    /// Seeded random split; returns `(train, test)` with
    /// `round(len · test_fraction)` test samples.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::seeded(seed, rng::stream::SPLIT));
        let n_test = ((self.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
        let (test_idx, train_idx) = order.split_at(n_test);
        let pick = |idx: &[usize], split| Dataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split,
        };
        (pick(train_idx, Split::Train), pick(test_idx, Split::Test))
    }
}

/// Gaussian blobs around `classes` seeded centers drawn from a standard
/// normal, with per-coordinate standard deviation `spread`. Samples are
/// interleaved by class, so every prefix is nearly balanced.
pub fn gen_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Dataset {
    let mut center_rng = rng::seeded(seed, rng::stream::BLOB_CENTERS);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut center_rng)).collect())
        .collect();
    let mut sample_rng = rng::seeded(seed, rng::stream::BLOB_SAMPLES);
    let total = classes * per_class;
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    for (r, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = r % classes;
        for (x, c) in row.iter_mut().zip(&centers[class]) {
            let noise: f64 = StandardNormal.sample(&mut sample_rng);
            *x = c + spread * noise;
        }
        labels.push(class);
    }
    Dataset {
        features,
        labels,
        classes,
        split: Split::Train,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let d = gen_blobs(3, 100, 2, 0.1, 0);
        assert_eq!(d.len(), 300);
        assert_eq!(d.dim(), 2);
        for c in 0..3 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        let again = gen_blobs(3, 100, 2, 0.1, 0);
        assert!(d
            .features
            .iter()
            .zip(&again.features)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_ne!(gen_blobs(3, 100, 2, 0.1, 1).features, d.features);
    }

    #[test]
    fn tight_blobs_are_nearest_centroid_separable() {
        let d = gen_blobs(4, 50, 3, 1e-6, 9);
        let mut centroids = vec![vec![0.0; 3]; 4];
        for (row, &l) in d.features.rows().into_iter().zip(&d.labels) {
            for (c, x) in centroids[l].iter_mut().zip(row) {
                *c += x / 50.0;
            }
        }
        let hits = d
            .features
            .rows()
            .into_iter()
            .zip(&d.labels)
            .filter(|(row, &l)| {
                let dist = |c: &Vec<f64>| c.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                (0..4).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))) == Some(l)
            })
            .count();
        assert_eq!(hits, d.len());
    }

    #[test]
    fn split_partitions_samples() {
        let d = gen_blobs(3, 10, 2, 0.5, 1);
        let (train, test) = d.split(0.2, 3);
        assert_eq!(train.len() + test.len(), 30);
        assert_eq!(test.len(), 6);
        assert_eq!(test.split, Split::Test);
        assert_eq!(d.split(0.2, 3), (train, test));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Array2::zeros((2, 2)), vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(Array2::zeros((1, 2)), vec![5], 2, Split::Train).is_err());
    }
}
