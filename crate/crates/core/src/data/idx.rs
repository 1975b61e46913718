use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{LabeledDataset, Split};
use crate::error::{OcuError, Result};
use crate::tensorize::ImageTensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Reads a file, transparently inflating it when it starts with the gzip
/// magic bytes.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| OcuError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| OcuError::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX3 image file into square single-channel images in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], origin: &Path) -> Result<Vec<ImageTensor>> {
    let header = |at| be_u32(bytes, at).ok_or_else(|| OcuError::format(origin, "truncated IDX header"));
    let magic = header(0)?;
    if magic != IMAGE_MAGIC {
        return Err(OcuError::format(origin, format!("bad IDX image magic 0x{magic:08x}")));
    }
    let count = header(4)? as usize;
    let rows = header(8)? as usize;
    let cols = header(12)? as usize;
    if rows != cols || rows == 0 {
        return Err(OcuError::format(origin, format!("non-square IDX images {rows}x{cols}")));
    }
    let pixels = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != count * pixels {
        return Err(OcuError::format(
            origin,
            format!("IDX payload has {} bytes, header implies {}", payload.len(), count * pixels),
        ));
    }
    Ok(payload
        .chunks_exact(pixels)
        .map(|chunk| {
            ImageTensor::new(rows, 1, chunk.iter().map(|&b| f64::from(b) / 255.0).collect())
                .expect("shape checked above")
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], origin: &Path) -> Result<Vec<u8>> {
    let header = |at| be_u32(bytes, at).ok_or_else(|| OcuError::format(origin, "truncated IDX header"));
    let magic = header(0)?;
    if magic != LABEL_MAGIC {
        return Err(OcuError::format(origin, format!("bad IDX label magic 0x{magic:08x}")));
    }
    let count = header(4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(OcuError::format(
            origin,
            format!("IDX payload has {} labels, header implies {count}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

/// Loads an IDX image/label file pair (optionally gzip-compressed).
pub fn load_idx(images: &Path, labels: &Path, split: Split, class_names: Vec<String>) -> Result<LabeledDataset> {
    let imgs = parse_idx_images(&read_maybe_gzip(images)?, images)?;
    let labs = parse_idx_labels(&read_maybe_gzip(labels)?, labels)?;
    if imgs.len() != labs.len() {
        return Err(OcuError::format(
            labels,
            format!("{} labels for {} images", labs.len(), imgs.len()),
        ));
    }
    let labs = labs.into_iter().map(usize::from).collect();
    LabeledDataset::new(imgs, labs, split, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, side: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IMAGE_MAGIC, count, side, side] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn parses_header_and_pixels() {
        let payload: Vec<u8> = (0..8).map(|i| i * 30).collect();
        let imgs = parse_idx_images(&image_file(2, 2, &payload), Path::new("x")).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[1].data(), &[120.0 / 255.0, 150.0 / 255.0, 180.0 / 255.0, 210.0 / 255.0]);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut bytes = image_file(1, 2, &[0; 4]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes, Path::new("x")), Err(OcuError::Format { .. })));
        let short = image_file(2, 2, &[0; 5]);
        assert!(matches!(parse_idx_images(&short, Path::new("x")), Err(OcuError::Format { .. })));
        assert!(parse_idx_images(&[0, 0, 8], Path::new("x")).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[4, 0, 9]);
        assert_eq!(parse_idx_labels(&bytes, Path::new("x")).unwrap(), vec![4, 0, 9]);
        bytes.pop();
        assert!(parse_idx_labels(&bytes, Path::new("x")).is_err());
    }
}
