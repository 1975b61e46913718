use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledDataset, Split};
use crate::error::{OcuError, Result};
use crate::tensorize::ImageTensor;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const RECORD: usize = 1 + 3 * PLANE;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Parses CIFAR-10 binary records, keeping only `classes` and relabeling
/// them by their position in that list.
pub fn parse_cifar_records(bytes: &[u8], classes: &[u8], origin: &Path) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    if bytes.len() % RECORD != 0 {
        return Err(OcuError::format(
            origin,
            format!("truncated CIFAR record: {} bytes is not a multiple of {RECORD}", bytes.len()),
        ));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for rec in bytes.chunks_exact(RECORD) {
        let label = rec[0];
        if usize::from(label) >= CIFAR10_CLASSES.len() {
            return Err(OcuError::format(origin, format!("unknown CIFAR class id {label}")));
        }
        if let Some(pos) = classes.iter().position(|&c| c == label) {
            let data = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
            images.push(ImageTensor::new(SIDE, 3, data).expect("fixed record size"));
            labels.push(pos);
        }
    }
    Ok((images, labels))
}

/// Loads CIFAR-10 binary batches and keeps four (or any number of)
/// classes, relabeled `0..classes.len()`.
pub fn load_cifar4(paths: &[PathBuf], classes: &[u8], split: Split) -> Result<LabeledDataset> {
    if classes.is_empty() {
        return Err(OcuError::InvalidArgument("no CIFAR classes selected".into()));
    }
    if let Some(&bad) = classes.iter().find(|&&c| usize::from(c) >= CIFAR10_CLASSES.len()) {
        return Err(OcuError::InvalidArgument(format!("unknown CIFAR class id {bad}")));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fs::read(path).map_err(|e| OcuError::io(path, e))?;
        let (i, l) = parse_cifar_records(&bytes, classes, path)?;
        images.extend(i);
        labels.extend(l);
    }
    let names = classes.iter().map(|&c| CIFAR10_CLASSES[usize::from(c)].to_string()).collect();
    LabeledDataset::new(images, labels, split, names)
}
