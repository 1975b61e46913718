use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{OcuError, Result};
use crate::tensorize::ImageTensor;

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Center-crops to a square and resamples it to `size × size`.
    pub fn to_tensor(&self, size: usize) -> Result<ImageTensor> {
        let side = self.width.min(self.height);
        if side == 0 || size == 0 {
            return Err(OcuError::InvalidArgument("empty image".into()));
        }
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        let square = ImageTensor::from_fn(side, 1, |_, y, x| {
            f64::from(self.pixels[(y0 + y) * self.width + x0 + x]) / 255.0
        });
        if side == size {
            Ok(square)
        } else {
            Ok(resize_bilinear(&square, size))
        }
    }
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Some((tokens, i + 1))
}

pub fn parse_pgm(bytes: &[u8], origin: &Path) -> Result<GrayImage> {
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| OcuError::format(origin, "truncated PGM header"))?;
    if tokens[0] != "P5" {
        return Err(OcuError::format(origin, format!("unsupported PGM magic {:?}", tokens[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| OcuError::format(origin, format!("bad PGM header field {s:?}")))
    };
    let width = num(&tokens[1])?;
    let height = num(&tokens[2])?;
    let maxval = num(&tokens[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(OcuError::format(origin, format!("unsupported PGM maxval {maxval}")));
    }
    let raster = bytes.get(offset..offset + width * height).ok_or_else(|| OcuError::format(origin, "truncated PGM raster"))?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((f64::from(v) * 255.0 / maxval as f64).round()).min(255.0) as u8)
            .collect()
    };
    Ok(GrayImage { width, height, pixels })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| OcuError::io(path, e))?;
    parse_pgm(&bytes, path)
}

/// Writes the first channel of `img` as an 8-bit binary PGM, clamping to
/// `[0, 1]`.
pub fn write_pgm(path: &Path, img: &ImageTensor) -> Result<()> {
    let n = img.size();
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    bytes.extend(img.channel(0).iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| OcuError::io(path, e))
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_bilinear(img: &ImageTensor, size: usize) -> ImageTensor {
    let n = img.size();
    let scale = n as f64 / size as f64;
    let coord = |o: usize| {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    ImageTensor::from_fn(size, img.channels(), |c, y, x| {
        let (y0, y1, fy) = coord(y);
        let (x0, x1, fx) = coord(x);
        let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
        let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Every `.pgm` file in `dir`, sorted by file name, as `size × size`
/// tensors.
pub fn load_image_dir(dir: &Path, size: usize) -> Result<Vec<(PathBuf, ImageTensor)>> {
    let entries = fs::read_dir(dir).map_err(|e| OcuError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(OcuError::format(dir, "no .pgm images found"));
    }
    paths
        .into_iter()
        .map(|p| {
            let t = read_pgm(&p)?.to_tensor(size)?;
            Ok((p, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        let img = parse_pgm(&bytes, Path::new("t")).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels[5], 255);
        let t = img.to_tensor(2).unwrap();
        assert_eq!(t.size(), 2);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0", Path::new("t")).is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\0\0", Path::new("t")).is_err());
        assert!(parse_pgm(b"P5\n1", Path::new("t")).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = ImageTensor::from_fn(5, 1, |_, y, x| ((y * 5 + x) * 10) as f64 / 255.0);
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap().to_tensor(5).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn resize_keeps_constants() {
        let img = ImageTensor::from_fn(7, 1, |_, _, _| 0.25);
        let r = resize_bilinear(&img, 4);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
