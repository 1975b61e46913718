//! Image tensors, patch matrices (im2col) and feature maps.
//!
//! Layout conventions used everywhere in the crate:
//! - tensors are channel-major, then row-major (`data[c][y][x]`);
//! - a patch matrix has one column per sliding position (row-major scan)
//!   and `C·H²` rows, channel blocks stacked, row-major inside the window.

use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};

/// Square multi-channel image with values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(size: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || size == 0 {
            return Err(OcuError::InvalidArgument("image must have at least one pixel and channel".into()));
        }
        if data.len() != size * size * channels {
            return Err(OcuError::dims("ImageTensor", size * size * channels, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(OcuError::NonFinite("image"));
        }
        Ok(Self { size, channels, data })
    }

    pub fn zeros(size: usize, channels: usize) -> Self {
        Self {
            size,
            channels,
            data: vec![0.0; size * size * channels],
        }
    }

    pub fn from_fn(size: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(size * size * channels);
        for c in 0..channels {
            for y in 0..size {
                for x in 0..size {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { size, channels, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.size + y) * self.size + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n2 = self.size * self.size;
        &self.data[c * n2..(c + 1) * n2]
    }

    /// Square sub-window `[y0, y0+size) × [x0, x0+size)` of every channel.
    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Result<ImageTensor> {
        if y0 + size > self.size || x0 + size > self.size {
            return Err(OcuError::InvalidArgument(format!(
                "crop {size}x{size} at ({y0}, {x0}) exceeds {0}x{0} image",
                self.size
            )));
        }
        Ok(ImageTensor::from_fn(size, self.channels, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    pub fn into_feature_map(self) -> FeatureMap {
        FeatureMap {
            size: self.size,
            channels: self.channels,
            data: self.data,
        }
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        self.clone().into_feature_map()
    }
}

/// Signed `G × G × q` activation. Also used for flattened vectors
/// (`size == 1`, one value per channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(size: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size * channels {
            return Err(OcuError::dims("FeatureMap", size * size * channels, data.len()));
        }
        Ok(Self { size, channels, data })
    }

    pub fn zeros(size: usize, channels: usize) -> Self {
        Self {
            size,
            channels,
            data: vec![0.0; size * size * channels],
        }
    }

    pub fn from_vector(values: Vec<f64>) -> Self {
        Self {
            size: 1,
            channels: values.len(),
            data: values,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.size + y) * self.size + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n2 = self.size * self.size;
        &self.data[c * n2..(c + 1) * n2]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n2 = self.size * self.size;
        &mut self.data[c * n2..(c + 1) * n2]
    }

    /// Values as a single-channel image, clamped into `[0, 1]`.
    pub fn to_image_clamped(&self) -> ImageTensor {
        ImageTensor {
            size: self.size,
            channels: self.channels,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Reinterprets the map as an input tensor. Negative values are kept;
    /// the optical layers clamp them when encoding.
    pub fn as_image_unchecked(&self) -> ImageTensor {
        ImageTensor {
            size: self.size,
            channels: self.channels,
            data: self.data.clone(),
        }
    }
}

/// Shape metadata carried by a patch matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub image_size: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub channels: usize,
}

impl PatchLayout {
    pub fn feature_size(&self) -> usize {
        (self.image_size - self.kernel_size) / self.stride + 1
    }
}

/// `C·H² × G²` real matrix of flattened patches, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    layout: PatchLayout,
}

impl PatchMatrix {
    /// Builds a patch matrix from raw values; mostly useful for tests and
    /// for feeding the optics directly.
    pub fn from_raw(rows: usize, cols: usize, data: Vec<f64>, layout: PatchLayout) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OcuError::dims("PatchMatrix", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data, layout })
    }

    /// Patch matrix with no image behind it: `rows` ports, `cols` time slots.
    pub fn from_columns(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let layout = PatchLayout {
            image_size: 0,
            kernel_size: 0,
            stride: 1,
            channels: 1,
        };
        Self::from_raw(rows, cols, data, layout)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn layout(&self) -> PatchLayout {
        self.layout
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Rows belonging to one input channel, as a contiguous `H² × G²` block.
    pub fn channel_block(&self, channel: usize) -> &[f64] {
        let h2 = self.rows / self.layout.channels.max(1);
        &self.data[channel * h2 * self.cols..(channel + 1) * h2 * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PatchMatrix {
        PatchMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            layout: self.layout,
        }
    }

    /// `a·self + b·other`, elementwise.
    pub fn combine(&self, a: f64, other: &PatchMatrix, b: f64) -> Result<PatchMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(OcuError::dims("PatchMatrix::combine", self.data.len(), other.data.len()));
        }
        Ok(PatchMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
            layout: self.layout,
        })
    }
}

pub fn feature_dim(image_size: usize, kernel_size: usize, stride: usize) -> Result<usize> {
    if kernel_size == 0 || stride == 0 {
        return Err(OcuError::InvalidArgument("kernel size and stride must be at least 1".into()));
    }
    if kernel_size > image_size {
        return Err(OcuError::InvalidArgument(format!(
            "kernel {kernel_size} larger than image {image_size}"
        )));
    }
    Ok((image_size - kernel_size) / stride + 1)
}

pub fn im2col(img: &ImageTensor, kernel_size: usize, stride: usize) -> Result<PatchMatrix> {
    let n = img.size;
    let g = feature_dim(n, kernel_size, stride)?;
    let h2 = kernel_size * kernel_size;
    let rows = img.channels * h2;
    let cols = g * g;
    let mut data = vec![0.0; rows * cols];
    for c in 0..img.channels {
        let plane = img.channel(c);
        for ky in 0..kernel_size {
            for kx in 0..kernel_size {
                let row = c * h2 + ky * kernel_size + kx;
                let out = &mut data[row * cols..(row + 1) * cols];
                for gy in 0..g {
                    let src = &plane[(gy * stride + ky) * n..];
                    for gx in 0..g {
                        out[gy * g + gx] = src[gx * stride + kx];
                    }
                }
            }
        }
    }
    Ok(PatchMatrix {
        rows,
        cols,
        data,
        layout: PatchLayout {
            image_size: n,
            kernel_size,
            stride,
            channels: img.channels,
        },
    })
}

/// Row-major `G × G` single-channel map from a flat vector.
pub fn col2im(values: &[f64], size: usize) -> Result<FeatureMap> {
    if values.len() != size * size {
        return Err(OcuError::dims("col2im", size * size, values.len()));
    }
    Ok(FeatureMap {
        size,
        channels: 1,
        data: values.to_vec(),
    })
}

/// Reflect-pads every channel by `pad` pixels (edge pixel not repeated).
pub fn reflect_pad(img: &ImageTensor, pad: usize) -> Result<ImageTensor> {
    let n = img.size;
    if pad >= n {
        return Err(OcuError::InvalidArgument(format!("reflection pad {pad} needs an image wider than {n}")));
    }
    let m = n + 2 * pad;
    let reflect = |i: isize| -> usize {
        let n = n as isize;
        let r = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        r as usize
    };
    Ok(ImageTensor::from_fn(m, img.channels, |c, y, x| {
        img.get(c, reflect(y as isize - pad as isize), reflect(x as isize - pad as isize))
    }))
}

/// Adjoint of [`reflect_pad`] for gradients: folds a padded gradient map
/// back onto the original pixels.
pub fn reflect_pad_adjoint(grad: &FeatureMap, pad: usize) -> FeatureMap {
    let m = grad.size;
    let n = m - 2 * pad;
    let reflect = |i: isize| -> usize {
        let n = n as isize;
        let r = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        r as usize
    };
    let mut out = FeatureMap::zeros(n, grad.channels);
    for c in 0..grad.channels {
        for y in 0..m {
            let sy = reflect(y as isize - pad as isize);
            for x in 0..m {
                let sx = reflect(x as isize - pad as isize);
                out.data[(c * n + sy) * n + sx] += grad.get(c, y, x);
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters per-patch gradients back to pixels.
pub fn col2im_adjoint(grad_patches: &[f64], layout: PatchLayout) -> FeatureMap {
    let n = layout.image_size;
    let h = layout.kernel_size;
    let s = layout.stride;
    let g = layout.feature_size();
    let cols = g * g;
    let h2 = h * h;
    let mut out = FeatureMap::zeros(n, layout.channels);
    for c in 0..layout.channels {
        let plane = out.channel_mut(c);
        for ky in 0..h {
            for kx in 0..h {
                let row = c * h2 + ky * h + kx;
                let src = &grad_patches[row * cols..(row + 1) * cols];
                for gy in 0..g {
                    for gx in 0..g {
                        plane[(gy * s + ky) * n + gx * s + kx] += src[gy * g + gx];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_dim_examples() {
        assert_eq!(feature_dim(5, 3, 1).unwrap(), 3);
        assert_eq!(feature_dim(128, 3, 1).unwrap(), 126);
        assert_eq!(feature_dim(7, 7, 3).unwrap(), 1);
        assert_eq!(feature_dim(7, 3, 2).unwrap(), 3);
        assert!(feature_dim(2, 3, 1).is_err());
        assert!(feature_dim(5, 3, 0).is_err());
    }

    #[test]
    fn single_patch_is_flattened_image() {
        let img = ImageTensor::from_fn(3, 1, |_, y, x| (y * 3 + x) as f64 / 10.0);
        let p = im2col(&img, 3, 1).unwrap();
        assert_eq!((p.rows(), p.cols()), (9, 1));
        assert_eq!(p.column(0), img.data().to_vec());
    }

    #[test]
    fn two_by_two_patches_of_three_by_three() {
        // Enumerated by hand: top-left, top-right, bottom-left, bottom-right windows.
        let img = ImageTensor::from_fn(3, 1, |_, y, x| (y * 3 + x + 1) as f64);
        let p = im2col(&img, 2, 1).unwrap();
        assert_eq!((p.rows(), p.cols()), (4, 4));
        let expected = [[1.0, 2.0, 4.0, 5.0], [2.0, 3.0, 5.0, 6.0], [4.0, 5.0, 7.0, 8.0], [5.0, 6.0, 8.0, 9.0]];
        for (m, col) in expected.iter().enumerate() {
            assert_eq!(p.column(m), col.to_vec());
        }
    }

    #[test]
    fn channels_stack_as_blocks() {
        let img = ImageTensor::from_fn(3, 2, |c, y, x| (c * 100 + y * 3 + x) as f64);
        let p = im2col(&img, 3, 1).unwrap();
        assert_eq!(p.rows(), 18);
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(9, 0), 100.0);
        assert_eq!(p.channel_block(1)[0], 100.0);
    }

    #[test]
    fn col2im_examples() {
        let m = col2im(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(m.get(0, 0, 1), 2.0);
        assert_eq!(m.get(0, 1, 0), 3.0);
        assert!(col2im(&[1.0, 2.0, 3.0], 2).is_err());
        let big = col2im(&vec![0.5; 126 * 126], 126).unwrap();
        assert_eq!((big.size(), big.channels()), (126, 1));
    }

    #[test]
    fn interior_pixels_appear_h_squared_times() {
        let n = 7;
        let h = 3;
        let img = ImageTensor::from_fn(n, 1, |_, y, x| (y * n + x) as f64);
        let p = im2col(&img, h, 1).unwrap();
        let mut counts = vec![0usize; n * n];
        for &v in p.data() {
            counts[v as usize] += 1;
        }
        // Pixels at distance ≥ h-1 from every border are fully interior.
        for y in (h - 1)..(n - h + 1) {
            for x in (h - 1)..(n - h + 1) {
                assert_eq!(counts[y * n + x], h * h);
            }
        }
        assert_eq!(counts[0], 1);
    }

    #[test]
    fn reflect_pad_mirrors_without_repeating_edge() {
        let img = ImageTensor::from_fn(3, 1, |_, y, x| (y * 3 + x) as f64);
        let p = reflect_pad(&img, 1).unwrap();
        assert_eq!(p.size(), 5);
        assert_eq!(p.get(0, 0, 0), img.get(0, 1, 1));
        assert_eq!(p.get(0, 0, 2), img.get(0, 1, 1));
        assert_eq!(p.get(0, 2, 0), img.get(0, 1, 1));
        assert_eq!(p.get(0, 4, 4), img.get(0, 1, 1));
        assert_eq!(p.get(0, 1, 1), img.get(0, 0, 0));
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <A x, y> = <x, Aᵀ y> for im2col and reflection padding.
        let img = ImageTensor::from_fn(5, 2, |c, y, x| ((c * 31 + y * 7 + x * 3) % 11) as f64 - 5.0);
        let padded = reflect_pad(&img, 1).unwrap();
        let p = im2col(&padded, 3, 1).unwrap();
        let y: Vec<f64> = (0..p.data().len()).map(|i| ((i * 13) % 17) as f64 - 8.0).collect();
        let lhs: f64 = p.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = reflect_pad_adjoint(&col2im_adjoint(&y, p.layout()), 1);
        let rhs: f64 = img.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
