//! Dataset ingestion, noise injection, cropping and quality metrics.

mod cifar;
mod idx;
mod metrics;
mod noise;
mod pgm;

pub use cifar::{load_cifar4, parse_cifar_records, CIFAR10_CLASSES};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, read_maybe_gzip};
pub use metrics::{accuracy, confusion, psnr};
pub use noise::{add_awgn, crop_patches, NoisySample};
pub use pgm::{load_image_dir, read_pgm, resize_bilinear, write_pgm, GrayImage};

use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};
use crate::tensorize::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    split: Split,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, split: Split, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(OcuError::dims("dataset labels", images.len(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(OcuError::InvalidArgument(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        if let Some(first) = images.first() {
            let shape = (first.size(), first.channels());
            if images.iter().any(|i| (i.size(), i.channels()) != shape) {
                return Err(OcuError::InvalidArgument("dataset images differ in shape".into()));
            }
        }
        Ok(Self {
            images,
            labels,
            split,
            class_names,
        })
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the first `limit` samples in file order.
    pub fn truncated(mut self, limit: usize) -> Self {
        self.images.truncate(limit);
        self.labels.truncate(limit);
        self
    }

    /// Keeps the first `per_class` samples of every class, preserving order.
    pub fn balanced_subset(&self, per_class: usize) -> Self {
        let mut seen = vec![0usize; self.num_classes()];
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (img, &l) in self.images.iter().zip(&self.labels) {
            if seen[l] < per_class {
                seen[l] += 1;
                images.push(img.clone());
                labels.push(l);
            }
        }
        Self {
            images,
            labels,
            split: self.split,
            class_names: self.class_names.clone(),
        }
    }
}
