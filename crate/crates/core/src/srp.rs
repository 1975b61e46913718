//! Structural re-parameterization: training an OCU so its balanced-detected
//! output reproduces an ordinary real-valued convolution kernel.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};
use crate::optics::{accumulate_detect, backprop_detect, InputEncoding, OcuGrad, OcuModel, SystemGrad};
use crate::optim::{Adam, AdamConfig};
use crate::tensorize::{col2im, feature_dim, im2col, FeatureMap, ImageTensor, PatchMatrix};

/// Square real-valued kernel, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    size: usize,
    values: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(OcuError::dims("Kernel", size * size, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OcuError::NonFinite("kernel"));
        }
        Ok(Self { size, values })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            values: vec![0.0; size * size],
        }
    }

    /// Center tap 1, everything else 0. `size` must be odd.
    pub fn identity(size: usize) -> Self {
        let mut k = Self::zeros(size);
        k.values[(size / 2) * size + size / 2] = 1.0;
        k
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rotated by 180°, turning correlation into convolution.
    pub fn flipped(&self) -> Kernel {
        Kernel {
            size: self.size,
            values: self.values.iter().rev().copied().collect(),
        }
    }
}

/// The eight 3×3 kernels used for the emulation benchmark.
pub fn standard_kernels() -> Vec<(&'static str, Kernel)> {
    let k = |v: [f64; 9]| Kernel::new(3, v.to_vec()).expect("3x3 kernel");
    vec![
        ("edge4", k([0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0])),
        ("edge8", k([-1.0, -1.0, -1.0, -1.0, 8.0, -1.0, -1.0, -1.0, -1.0])),
        ("sobel_x", k([-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0])),
        ("sobel_y", k([-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0])),
        ("sharpen", k([0.0, -1.0, 0.0, -1.0, 5.0, -1.0, 0.0, -1.0, 0.0])),
        (
            "gaussian",
            k([1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0].map(|v| v / 16.0)),
        ),
        ("box", k([1.0 / 9.0; 9])),
        ("emboss", k([-2.0, -1.0, 0.0, -1.0, 1.0, 1.0, 0.0, 1.0, 2.0])),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// Kernel applied as-is (deep-learning convention).
    #[default]
    Correlation,
    /// Kernel flipped first.
    Convolution,
}

/// Direct sliding-window evaluation on a single-channel image, no padding.
pub fn conv2d_reference(img: &ImageTensor, kernel: &Kernel, stride: usize, mode: ConvMode) -> Result<FeatureMap> {
    if img.channels() != 1 {
        return Err(OcuError::dims("conv2d_reference channels", 1, img.channels()));
    }
    let k = match mode {
        ConvMode::Correlation => kernel.clone(),
        ConvMode::Convolution => kernel.flipped(),
    };
    let h = k.size;
    let g = feature_dim(img.size(), h, stride)?;
    let mut out = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let mut acc = 0.0;
            for m in 0..h {
                for n in 0..h {
                    acc += img.get(0, i * stride + m, j * stride + n) * k.values[m * h + n];
                }
            }
            out.push(acc);
        }
    }
    col2im(&out, g)
}

/// Seeded uniform `[0, 1)` training pattern.
pub fn generate_pattern(seed: u64, size: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(size, 1, |_, _, _| rng.gen::<f64>())
}

/// Random pattern with its ground-truth feature map.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub pattern: ImageTensor,
    pub kernel: Kernel,
    pub labels: Vec<f64>,
}

impl TrainingPair {
    pub fn new(pattern: ImageTensor, kernel: Kernel, stride: usize) -> Result<Self> {
        let labels = conv2d_reference(&pattern, &kernel, stride, ConvMode::Correlation)?.into_data();
        Ok(Self { pattern, kernel, labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `½·Σ (R_BPD − R̂)²`
    pub loss: f64,
    /// Per-pixel mean squared error.
    pub mse: f64,
}

impl LossReport {
    fn from_residuals(residuals: impl Iterator<Item = f64>) -> Self {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in residuals {
            sum += r * r;
            count += 1;
        }
        LossReport {
            loss: 0.5 * sum,
            mse: if count == 0 { 0.0 } else { sum / count as f64 },
        }
    }
}

fn check_labels(model: &OcuModel, patches: &PatchMatrix, labels: &[f64]) -> Result<()> {
    if patches.rows() != model.num_inputs() {
        return Err(OcuError::dims("srp input ports", model.num_inputs(), patches.rows()));
    }
    if labels.len() != patches.cols() {
        return Err(OcuError::dims("srp labels", patches.cols(), labels.len()));
    }
    Ok(())
}

/// Detected output for encoded `patches`.
pub fn detect_encoded(model: &OcuModel, patches: &PatchMatrix) -> Result<Vec<f64>> {
    if patches.rows() != model.num_inputs() {
        return Err(OcuError::dims("ocu input ports", model.num_inputs(), patches.rows()));
    }
    let mut out = vec![0.0; patches.cols()];
    accumulate_detect(&model.system_matrix(), model.gain(), patches.data(), patches.cols(), &mut out);
    Ok(out)
}

/// Loss of an OCU against labels. `patches` are field amplitudes (already
/// encoded).
pub fn srp_loss(model: &OcuModel, patches: &PatchMatrix, labels: &[f64]) -> Result<LossReport> {
    check_labels(model, patches, labels)?;
    let out = detect_encoded(model, patches)?;
    Ok(LossReport::from_residuals(out.iter().zip(labels).map(|(o, l)| o - l)))
}

/// Exact gradient of `srp_loss` with respect to every phase and κ.
pub fn phase_gradients(model: &OcuModel, patches: &PatchMatrix, labels: &[f64]) -> Result<(LossReport, OcuGrad)> {
    check_labels(model, patches, labels)?;
    let w = model.system_matrix();
    let cols = patches.cols();
    let mut out = vec![0.0; cols];
    accumulate_detect(&w, model.gain(), patches.data(), cols, &mut out);
    let residual: Vec<f64> = out.iter().zip(labels).map(|(o, l)| o - l).collect();
    let report = LossReport::from_residuals(residual.iter().copied());
    let mut grad = SystemGrad::zeros(model.num_inputs());
    backprop_detect(&w, model.gain(), patches.data(), cols, &residual, &mut grad, None);
    Ok((
        report,
        OcuGrad {
            phases: model.phase_gradients_from_system(&grad.system),
            gain: grad.gain,
        },
    ))
}

/// Sets κ so the detected output has the same RMS as the labels. A zero
/// target keeps κ small but positive.
pub fn normalize_gain(model: &mut OcuModel, patches: &PatchMatrix, labels: &[f64]) -> Result<()> {
    check_labels(model, patches, labels)?;
    model.set_gain(1.0);
    let raw = detect_encoded(model, patches)?;
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    let raw_rms = rms(&raw);
    let label_rms = rms(labels);
    if raw_rms == 0.0 || !raw_rms.is_finite() {
        return Err(OcuError::InvalidArgument(
            "OCU output is identically zero on the training pattern".into(),
        ));
    }
    let target = if label_rms > 0.0 { label_rms } else { 1e-3 };
    model.set_gain(target / raw_rms);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Stop once the loss `J` drops to this value.
    pub tolerance: f64,
    /// Columns per step; `None` trains on the full pattern each step.
    pub batch_size: Option<usize>,
    pub stride: usize,
    pub encoding: InputEncoding,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            seed: 0,
            optimizer: AdamConfig::default(),
            tolerance: 0.0,
            batch_size: None,
            stride: 1,
            encoding: InputEncoding::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(OcuError::Config("epochs must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(OcuError::Config("learning_rate must be positive".into()));
        }
        if self.stride == 0 {
            return Err(OcuError::Config("stride must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(OcuError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters with the lowest full-pattern loss seen.
    pub model: OcuModel,
    pub history: Vec<EpochRecord>,
    pub best: EpochRecord,
}

fn select_columns(patches: &PatchMatrix, labels: &[f64], idx: &[usize]) -> (PatchMatrix, Vec<f64>) {
    let rows = patches.rows();
    let cols = patches.cols();
    let mut data = Vec::with_capacity(rows * idx.len());
    for r in 0..rows {
        let row = &patches.data()[r * cols..(r + 1) * cols];
        data.extend(idx.iter().map(|&c| row[c]));
    }
    let sub = PatchMatrix::from_raw(rows, idx.len(), data, patches.layout()).expect("column subset");
    (sub, idx.iter().map(|&c| labels[c]).collect())
}

/// Trains `model` (starting from its current phases) to emulate `kernel`
/// on `pattern`. κ is re-normalized before the first step and optimized in
/// log space so it stays positive.
pub fn fit_kernel(model: OcuModel, kernel: &Kernel, pattern: &ImageTensor, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let h2 = kernel.size() * kernel.size();
    if model.num_inputs() != h2 {
        return Err(OcuError::dims("fit_kernel input ports", h2, model.num_inputs()));
    }
    let pair = TrainingPair::new(pattern.clone(), kernel.clone(), cfg.stride)?;
    let patches = cfg.encoding.encode_patches(&im2col(pattern, kernel.size(), cfg.stride)?);
    let labels = pair.labels;

    let mut model = model;
    normalize_gain(&mut model, &patches, &labels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..patches.cols()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_model = model.clone();
    let mut best = EpochRecord {
        epoch: 0,
        loss: f64::INFINITY,
        mse: f64::INFINITY,
    };

    for epoch in 0..cfg.epochs {
        let full = srp_loss(&model, &patches, &labels)?;
        if !full.loss.is_finite() {
            return Err(OcuError::Diverged { epoch, loss: full.loss });
        }
        let record = EpochRecord {
            epoch,
            loss: full.loss,
            mse: full.mse,
        };
        history.push(record);
        if full.loss < best.loss {
            best = record;
            best_model = model.clone();
        }
        if full.loss <= cfg.tolerance {
            break;
        }

        match cfg.batch_size {
            None => step(&mut model, &mut adam, &patches, &labels)?,
            Some(bs) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(bs) {
                    let (sub, sub_labels) = select_columns(&patches, &labels, chunk);
                    step(&mut model, &mut adam, &sub, &sub_labels)?;
                }
            }
        }
    }

    let last = srp_loss(&model, &patches, &labels)?;
    if last.loss.is_finite() && last.loss < best.loss {
        best = EpochRecord {
            epoch: history.len(),
            loss: last.loss,
            mse: last.mse,
        };
        best_model = model;
    }
    Ok(FitOutcome {
        model: best_model,
        history,
        best,
    })
}

fn step(model: &mut OcuModel, adam: &mut Adam, patches: &PatchMatrix, labels: &[f64]) -> Result<()> {
    let (_, grad) = phase_gradients(model, patches, labels)?;
    adam.begin_step();
    for (slot, (line, g)) in model.phases_mut().iter_mut().zip(&grad.phases).enumerate() {
        adam.update(slot, line, g);
    }
    let slot = grad.phases.len();
    let gain = model.gain();
    let mut log_gain = [gain.ln()];
    adam.update(slot, &mut log_gain, &[gain * grad.gain]);
    model.set_gain(log_gain[0].exp());
    Ok(())
}

/// Runs a trained OCU as a convolution over a single-channel image.
pub fn ocu_convolve(model: &OcuModel, img: &ImageTensor, stride: usize, encoding: InputEncoding) -> Result<FeatureMap> {
    if img.channels() != 1 {
        return Err(OcuError::dims("ocu_convolve channels", 1, img.channels()));
    }
    let h = (model.num_inputs() as f64).sqrt().round() as usize;
    if h * h != model.num_inputs() {
        return Err(OcuError::InvalidArgument(format!(
            "OCU with {} inputs does not correspond to a square kernel",
            model.num_inputs()
        )));
    }
    let patches = encoding.encode_patches(&im2col(img, h, stride)?);
    let out = detect_encoded(model, &patches)?;
    col2im(&out, feature_dim(img.size(), h, stride)?)
}

/// Per-pixel MSE between the OCU output and the exact convolution on `img`.
pub fn kernel_mse(model: &OcuModel, kernel: &Kernel, img: &ImageTensor, stride: usize, encoding: InputEncoding) -> Result<f64> {
    let truth = conv2d_reference(img, kernel, stride, ConvMode::Correlation)?;
    let approx = ocu_convolve(model, img, stride, encoding)?;
    let n = truth.len() as f64;
    Ok(truth.data().iter().zip(approx.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}
