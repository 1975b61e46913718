use crate::error::{OcuError, Result};
use crate::tensorize::ImageTensor;

/// Peak signal-to-noise ratio in dB for `[0, 1]` images, with an 8-bit
/// peak of 255. Identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if (a.size(), a.channels()) != (b.size(), b.channels()) {
        return Err(OcuError::dims("psnr", a.data().len(), b.data().len()));
    }
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = 255.0 * (x - y);
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(OcuError::dims("accuracy", labels.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(OcuError::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `classes × classes` counts; rows are true classes, columns predictions.
pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != labels.len() {
        return Err(OcuError::dims("confusion", labels.len(), preds.len()));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(OcuError::InvalidArgument(format!("class index outside {classes} classes")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = ImageTensor::from_fn(4, 1, |_, _, _| 100.0 / 255.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = ImageTensor::from_fn(4, 1, |_, _, _| 116.0 / 255.0);
        let expected = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - 24.05).abs() < 0.01);
        assert!(psnr(&a, &ImageTensor::zeros(3, 1)).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        assert_eq!(accuracy(&labels, &labels).unwrap(), 1.0);
        let m = confusion(&labels, &labels, 3).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(confusion(&[2, 0], &[0, 0], 3).unwrap()[0], vec![1, 0, 1]);
    }
}
