use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Mode, ParamKind};
use super::loss::{argmax, batch_cross_entropy, batch_mse};
use super::network::{Network, Task};
use crate::data::{accuracy, add_awgn, confusion, crop_patches, psnr, LabeledDataset};
use crate::error::{OcuError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::tensorize::{FeatureMap, ImageTensor};

/// One optimizer step over every parameter group. Detection gains are
/// stepped in log space so they stay positive.
pub fn adam_step(net: &mut Network, adam: &mut Adam) {
    adam.begin_step();
    let mut slot = 0;
    net.visit_params(&mut |kind, params, grads| {
        if kind == ParamKind::Gain && params[0] > 0.0 {
            let k = params[0];
            let mut log_k = [k.ln()];
            adam.update(slot, &mut log_k, &[k * grads[0]]);
            params[0] = log_k[0].exp();
        } else {
            adam.update(slot, params, grads);
        }
        slot += 1;
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Evaluate on the test split every this many epochs (0: only at the end).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(OcuError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(OcuError::Config("batch_size must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(OcuError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub history: Vec<ClassifierEpoch>,
    pub test_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

fn classes_of(net: &Network) -> Result<usize> {
    match net.spec().task {
        Task::Classification { classes } => Ok(classes),
        Task::Denoising => Err(OcuError::InvalidArgument("network is not a classifier".into())),
    }
}

fn check_dataset(net: &Network, data: &LabeledDataset) -> Result<()> {
    let classes = classes_of(net)?;
    if data.num_classes() > classes {
        return Err(OcuError::dims("dataset classes", classes, data.num_classes()));
    }
    let input = net.spec().input;
    if let Some(img) = data.images().first() {
        if img.channels() != input.channels {
            return Err(OcuError::dims("dataset channels", input.channels, img.channels()));
        }
        if img.size() != input.size {
            return Err(OcuError::dims("dataset image size", input.size, img.size()));
        }
    }
    Ok(())
}

const EVAL_CHUNK: usize = 64;

/// Predicted class of every image (inference mode).
pub fn predict(net: &mut Network, images: &[ImageTensor]) -> Result<Vec<usize>> {
    classes_of(net)?;
    let mut preds = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let batch: Vec<FeatureMap> = chunk.iter().map(ImageTensor::to_feature_map).collect();
        let out = net.forward(&batch, Mode::Eval)?;
        preds.extend(out.iter().map(|o| argmax(o.data())));
    }
    Ok(preds)
}

/// Accuracy and confusion matrix on a labelled set.
pub fn evaluate_classifier(net: &mut Network, data: &LabeledDataset) -> Result<(f64, Vec<Vec<usize>>)> {
    check_dataset(net, data)?;
    let classes = classes_of(net)?;
    let preds = predict(net, data.images())?;
    Ok((accuracy(&preds, data.labels())?, confusion(&preds, data.labels(), classes)?))
}

/// Mini-batch Adam on softmax cross-entropy. OCL gains are calibrated on
/// the first batch unless the network was loaded already calibrated.
pub fn train_classifier(
    net: &mut Network,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<ClassifierReport> {
    cfg.validate()?;
    check_dataset(net, train)?;
    check_dataset(net, test)?;
    if train.is_empty() {
        return Err(OcuError::InvalidArgument("empty training set".into()));
    }
    if !net.is_calibrated() {
        let first: Vec<FeatureMap> = train.images().iter().take(cfg.batch_size).map(ImageTensor::to_feature_map).collect();
        net.calibrate(&first)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<FeatureMap> = chunk.iter().map(|&i| train.images()[i].to_feature_map()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            net.zero_grad();
            let out = net.forward(&batch, Mode::Train)?;
            correct += out.iter().zip(&labels).filter(|(o, &l)| argmax(o.data()) == l).count();
            let (loss, grads) = match batch_cross_entropy(&out, &labels) {
                Ok(v) => v,
                Err(OcuError::NonFinite(_)) => return Err(OcuError::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(OcuError::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            net.backward(grads)?;
            adam_step(net, &mut adam);
        }
        let last = epoch + 1 == cfg.epochs;
        let test_accuracy = if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            Some(evaluate_classifier(net, test)?.0)
        } else {
            None
        };
        let record = ClassifierEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4}{}",
            record.loss,
            record.train_accuracy,
            test_accuracy.map_or(String::new(), |a| format!(" test acc {a:.4}"))
        );
        history.push(record);
    }
    let (test_accuracy, confusion) = evaluate_classifier(net, test)?;
    Ok(ClassifierReport {
        history,
        test_accuracy,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub crops_per_image: usize,
    pub patch_size: usize,
    /// Noise level in 8-bit gray levels.
    pub sigma: f64,
    pub optimizer: AdamConfig,
    /// Epochs at which the learning rate is divided by 10.
    pub lr_milestones: Vec<usize>,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            crops_per_image: 8,
            patch_size: 40,
            sigma: 20.0,
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            lr_milestones: Vec::new(),
            seed: 0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.crops_per_image == 0 || self.patch_size < 2 {
            return Err(OcuError::Config(
                "epochs, crops_per_image must be ≥ 1, batch_size and patch_size ≥ 2".into(),
            ));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(OcuError::Config("sigma must be finite and nonnegative".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(OcuError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseEpoch {
    pub epoch: usize,
    /// Mean squared residual error on the `[0, 1]` scale.
    pub loss: f64,
}

/// Predicted noise and the resulting clean estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub residual: FeatureMap,
    pub clean: FeatureMap,
}

fn check_denoiser(net: &Network) -> Result<()> {
    if net.spec().task != Task::Denoising {
        return Err(OcuError::InvalidArgument("network is not a denoiser".into()));
    }
    Ok(())
}

/// `clean = noisy − residual`.
pub fn denoiser_forward(net: &mut Network, noisy: &ImageTensor) -> Result<DenoiseOutput> {
    check_denoiser(net)?;
    let input = noisy.to_feature_map();
    let residual = net
        .forward(std::slice::from_ref(&input), Mode::Eval)?
        .pop()
        .expect("one output per input");
    let mut clean = input;
    for (c, r) in clean.data_mut().iter_mut().zip(residual.data()) {
        *c -= r;
    }
    Ok(DenoiseOutput { residual, clean })
}

/// Residual learning on fresh random crops and noise every epoch.
pub fn train_denoiser(net: &mut Network, images: &[ImageTensor], cfg: &DenoiseConfig) -> Result<Vec<DenoiseEpoch>> {
    cfg.validate()?;
    check_denoiser(net)?;
    if images.is_empty() {
        return Err(OcuError::InvalidArgument("no training images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.lr_milestones.contains(&epoch) {
            let lr = adam.config().learning_rate / 10.0;
            adam.set_learning_rate(lr);
        }
        let crops = crop_patches(images, cfg.patch_size, cfg.crops_per_image, rng.gen())?;
        let mut samples = Vec::with_capacity(crops.len());
        for crop in &crops {
            let s = add_awgn(crop, cfg.sigma, rng.gen())?;
            samples.push((s.noisy.into_feature_map(), s.noise.into_feature_map()));
        }
        samples.shuffle(&mut rng);
        if !net.is_calibrated() {
            let first: Vec<FeatureMap> = samples.iter().take(cfg.batch_size).map(|s| s.0.clone()).collect();
            let noise: Vec<FeatureMap> = samples.iter().take(cfg.batch_size).map(|s| s.1.clone()).collect();
            net.calibrate(&first)?;
            net.match_output_scale(&first, &noise)?;
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in samples.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let inputs: Vec<FeatureMap> = chunk.iter().map(|s| s.0.clone()).collect();
            let targets: Vec<FeatureMap> = chunk.iter().map(|s| s.1.clone()).collect();
            net.zero_grad();
            let out = net.forward(&inputs, Mode::Train)?;
            let (loss, grads) = batch_mse(&out, &targets)?;
            if !loss.is_finite() {
                return Err(OcuError::Diverged { epoch, loss });
            }
            loss_sum += loss;
            batches += 1;
            net.backward(grads)?;
            adam_step(net, &mut adam);
        }
        let record = DenoiseEpoch {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
        };
        log::info!("epoch {epoch}: residual mse {:.6}", record.loss);
        history.push(record);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrRow {
    pub index: usize,
    pub noisy: f64,
    pub denoised: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrTable {
    pub rows: Vec<PsnrRow>,
    pub mean_noisy: f64,
    pub mean_denoised: f64,
    /// Clean estimates clamped to `[0, 1]`, one per test image.
    pub denoised: Vec<ImageTensor>,
    pub noisy: Vec<ImageTensor>,
}

/// Adds noise with seed `seed + i` to test image `i`, denoises it and
/// reports PSNR before and after.
pub fn evaluate_denoiser(net: &mut Network, images: &[ImageTensor], sigma: f64, seed: u64) -> Result<PsnrTable> {
    check_denoiser(net)?;
    if images.is_empty() {
        return Err(OcuError::InvalidArgument("no test images".into()));
    }
    let mut rows = Vec::with_capacity(images.len());
    let mut denoised = Vec::with_capacity(images.len());
    let mut noisy_images = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let sample = add_awgn(img, sigma, seed.wrapping_add(i as u64))?;
        let out = denoiser_forward(net, &sample.noisy)?;
        let clean = out.clean.to_image_clamped();
        rows.push(PsnrRow {
            index: i,
            noisy: psnr(&sample.noisy, img)?,
            denoised: psnr(&clean, img)?,
        });
        denoised.push(clean);
        noisy_images.push(sample.noisy);
    }
    let n = rows.len() as f64;
    Ok(PsnrTable {
        mean_noisy: rows.iter().map(|r| r.noisy).sum::<f64>() / n,
        mean_denoised: rows.iter().map(|r| r.denoised).sum::<f64>() / n,
        rows,
        denoised,
        noisy: noisy_images,
    })
}
