use crate::error::{OcuError, Result};
use crate::tensorize::FeatureMap;

/// Softmax cross-entropy of one score vector against a class index, and
/// its gradient with respect to the scores.
pub fn classification_loss(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(OcuError::InvalidArgument(format!(
            "label {label} outside {} scores",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(OcuError::NonFinite("class scores"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over a batch of score vectors; gradients are scaled
/// by `1/batch`.
pub fn batch_cross_entropy(outputs: &[FeatureMap], labels: &[usize]) -> Result<(f64, Vec<FeatureMap>)> {
    if outputs.len() != labels.len() {
        return Err(OcuError::dims("cross-entropy batch", labels.len(), outputs.len()));
    }
    let b = outputs.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (o, &l) in outputs.iter().zip(labels) {
        let (loss, g) = classification_loss(o.data(), l)?;
        total += loss;
        grads.push(FeatureMap::from_vector(g.into_iter().map(|v| v / b).collect()));
    }
    Ok((total / b, grads))
}

/// Mean squared error over every element of the batch.
pub fn batch_mse(outputs: &[FeatureMap], targets: &[FeatureMap]) -> Result<(f64, Vec<FeatureMap>)> {
    if outputs.len() != targets.len() {
        return Err(OcuError::dims("mse batch", targets.len(), outputs.len()));
    }
    let count: usize = outputs.iter().map(FeatureMap::len).sum();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        if o.len() != t.len() {
            return Err(OcuError::dims("mse sample", t.len(), o.len()));
        }
        let mut g = o.clone();
        for (gv, &tv) in g.data_mut().iter_mut().zip(t.data()) {
            let d = *gv - tv;
            total += d * d;
            *gv = 2.0 * d / count as f64;
        }
        grads.push(g);
    }
    Ok((total / count as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_log_classes() {
        let (loss, grad) = classification_loss(&[0.3; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad[2] + 0.75).abs() < 1e-15);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn dominant_true_class_has_vanishing_loss() {
        let (loss, _) = classification_loss(&[1000.0, 0.0, -5.0], 0).unwrap();
        assert!(loss < 1e-300 || loss == 0.0);
        let (big, _) = classification_loss(&[1000.0, 0.0], 1).unwrap();
        assert!((big - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(classification_loss(&[0.0, 1.0], 2).is_err());
        assert!(classification_loss(&[f64::NAN, 1.0], 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let scores = [0.2, -1.3, 0.7, 2.1];
        let (_, g) = classification_loss(&scores, 1).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let mut up = scores;
            up[i] += h;
            let mut dn = scores;
            dn[i] -= h;
            let fd = (classification_loss(&up, 1).unwrap().0 - classification_loss(&dn, 1).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-4));
        }
    }

    #[test]
    fn mse_examples() {
        let a = FeatureMap::from_vector(vec![1.0, 2.0]);
        let b = FeatureMap::from_vector(vec![1.0, 4.0]);
        let (l, g) = batch_mse(&[a], &[b]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g[0].data(), &[0.0, -2.0]);
    }
}
