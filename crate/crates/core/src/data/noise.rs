use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{OcuError, Result};
use crate::tensorize::ImageTensor;

/// A clean image, its noisy observation and the noise actually applied
/// (after clipping), all on the `[0, 1]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub clean: ImageTensor,
    pub noisy: ImageTensor,
    pub noise: ImageTensor,
    /// Standard deviation in 8-bit gray levels.
    pub sigma: f64,
}

/// Adds white Gaussian noise of `sigma` gray levels on the 0–255 scale and
/// clips back into range.
pub fn add_awgn(img: &ImageTensor, sigma: f64, seed: u64) -> Result<NoisySample> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(OcuError::InvalidArgument(format!("noise level {sigma} must be finite and nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<f64> = img
        .data()
        .iter()
        .map(|&x| {
            if sigma == 0.0 {
                return x;
            }
            let z: f64 = rng.sample(StandardNormal);
            (x * 255.0 + sigma * z).clamp(0.0, 255.0) / 255.0
        })
        .collect();
    let noise = noisy.iter().zip(img.data()).map(|(y, x)| y - x).collect();
    Ok(NoisySample {
        clean: img.clone(),
        noisy: ImageTensor::new(img.size(), img.channels(), noisy)?,
        noise: ImageTensor::new(img.size(), img.channels(), noise)?,
        sigma,
    })
}

/// `count_per_image` uniformly placed square crops from every image, in
/// image order.
pub fn crop_patches(images: &[ImageTensor], patch: usize, count_per_image: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    if patch == 0 {
        return Err(OcuError::InvalidArgument("patch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(images.len() * count_per_image);
    for img in images {
        if img.size() < patch {
            return Err(OcuError::InvalidArgument(format!(
                "image of size {} is smaller than the {patch}-pixel patch",
                img.size()
            )));
        }
        let span = img.size() - patch + 1;
        for _ in 0..count_per_image {
            let y = rng.gen_range(0..span);
            let x = rng.gen_range(0..span);
            out.push(img.crop(y, x, patch)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = ImageTensor::from_fn(8, 1, |_, y, x| (y * 8 + x) as f64 / 64.0);
        let s = add_awgn(&img, 0.0, 3).unwrap();
        assert_eq!(s.noisy, img);
        assert!(s.noise.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let img = ImageTensor::from_fn(16, 1, |_, _, _| 0.5);
        assert_eq!(add_awgn(&img, 15.0, 9).unwrap(), add_awgn(&img, 15.0, 9).unwrap());
        assert_ne!(add_awgn(&img, 15.0, 9).unwrap().noisy, add_awgn(&img, 15.0, 10).unwrap().noisy);
        assert!(add_awgn(&img, -1.0, 0).is_err());
    }

    #[test]
    fn crop_counts_and_bounds() {
        let imgs = vec![ImageTensor::zeros(50, 1), ImageTensor::zeros(40, 1)];
        let crops = crop_patches(&imgs, 40, 3, 1).unwrap();
        assert_eq!(crops.len(), 6);
        assert!(crops.iter().all(|c| c.size() == 40));
        let whole = ImageTensor::from_fn(5, 1, |_, y, x| (y + x) as f64 / 10.0);
        assert_eq!(crop_patches(&[whole.clone()], 5, 1, 0).unwrap()[0], whole);
        assert!(crop_patches(&[ImageTensor::zeros(30, 1)], 40, 1, 0).is_err());
    }
}
