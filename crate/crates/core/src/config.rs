//! TOML experiment configuration.
//!
//! Physical lengths are given in the units named by the key suffix
//! (`_um`, `_nm`) and converted to meters once, here. Relative paths are
//! resolved against the directory containing the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{OcuError, Result};
use crate::ocnn::{ClassifierTopology, DenoiseConfig, DenoiserTopology, PoolMode, Shape, TrainConfig};
use crate::optics::{uniform_ports, InputEncoding, OcuGeometry, MICRON};
use crate::optim::AdamConfig;
use crate::perf::PerfSpec;
use crate::srp::FitConfig;

const NANOMETER: f64 = 1e-9;

/// Reads and parses a config file. Parse failures, including missing
/// keys, come back as [`OcuError::Config`] naming the key.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| OcuError::io(path, e))?;
    parse(&text).map_err(|e| match e {
        OcuError::Config(msg) => OcuError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| OcuError::Config(e.message().to_string() + &location(&e, text)))
}

fn location(e: &toml::de::Error, text: &str) -> String {
    e.span()
        .map(|s| {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        })
        .unwrap_or_default()
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// `[geometry]`: every OCU of an experiment shares these values.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub wavelength_um: f64,
    pub slab_index: f64,
    pub slot_index: f64,
    pub layer_gap_um: f64,
    pub aperture_um: f64,
    pub metaunit_period_um: f64,
    pub metaunits: usize,
    /// Diffraction regions `M`; there are `M − 1` metalines.
    pub layers: usize,
    #[serde(default = "default_slot_width")]
    pub slot_width_nm: f64,
    #[serde(default = "default_slot_gap")]
    pub slot_gap_nm: f64,
    #[serde(default = "default_slot_height")]
    pub slot_height_nm: f64,
    #[serde(default = "one")]
    pub amplitude_coeff: f64,
    #[serde(default)]
    pub phase_coeff: f64,
}

fn default_slot_width() -> f64 {
    200.0
}
fn default_slot_gap() -> f64 {
    500.0
}
fn default_slot_height() -> f64 {
    220.0
}
fn one() -> f64 {
    1.0
}

impl GeometryConfig {
    pub fn build(&self, kernel_size: usize) -> Result<OcuGeometry> {
        let inputs = kernel_size * kernel_size;
        let aperture = self.aperture_um * MICRON;
        let g = OcuGeometry {
            wavelength: self.wavelength_um * MICRON,
            slab_index: self.slab_index,
            slot_index: self.slot_index,
            layer_gap: self.layer_gap_um * MICRON,
            aperture,
            metaunit_period: self.metaunit_period_um * MICRON,
            slot_width: self.slot_width_nm * NANOMETER,
            slot_gap: self.slot_gap_nm * NANOMETER,
            slot_height: self.slot_height_nm * NANOMETER,
            num_layers: self.layers,
            metaunits_per_layer: self.metaunits,
            num_inputs: inputs,
            input_positions: uniform_ports(inputs, aperture),
            output_positions: [aperture / 4.0, -aperture / 4.0],
            amplitude_coeff: self.amplitude_coeff,
            phase_coeff: self.phase_coeff,
        };
        g.validate().map_err(|e| OcuError::Config(format!("[geometry]: {e}")))?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub name: String,
    /// Row-major taps; the kernel size is the square root of the length.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pattern")]
    pub pattern_size: usize,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default)]
    pub encoding: InputEncoding,
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_pattern() -> usize {
    128
}
fn one_usize() -> usize {
    1
}

/// `fit-kernel`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitKernelConfig {
    pub geometry: GeometryConfig,
    pub fit: FitSection,
    /// Use the eight built-in kernels when no `[[kernels]]` are listed.
    #[serde(default)]
    pub kernels: Vec<KernelEntry>,
    /// Held-out image for the reported test MSE.
    #[serde(default)]
    pub test_image: Option<PathBuf>,
}

impl FitKernelConfig {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            epochs: self.fit.epochs,
            seed,
            optimizer: AdamConfig {
                learning_rate: self.fit.learning_rate,
                ..AdamConfig::default()
            },
            tolerance: self.fit.tolerance,
            batch_size: self.fit.batch_size,
            stride: self.fit.stride,
            encoding: self.fit.encoding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    #[default]
    Optical,
    Electrical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierPreset {
    FashionMnist,
    Cifar4,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierNetwork {
    #[serde(default)]
    pub kind: NetworkKind,
    pub preset: ClassifierPreset,
    #[serde(default)]
    pub ocks: Option<usize>,
    #[serde(default)]
    pub hidden: Option<[usize; 2]>,
    #[serde(default)]
    pub pool: PoolMode,
    #[serde(default)]
    pub encoding: InputEncoding,
}

impl ClassifierNetwork {
    pub fn topology(&self) -> ClassifierTopology {
        let mut t = match self.preset {
            ClassifierPreset::FashionMnist => ClassifierTopology::fashion_mnist(),
            ClassifierPreset::Cifar4 => ClassifierTopology::cifar4(),
        };
        if let Some(q) = self.ocks {
            t.ocks = q;
        }
        if let Some(h) = self.hidden {
            t.hidden = h;
        }
        t.pool_mode = self.pool;
        t.encoding = self.encoding;
        t
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        class_names: Option<Vec<String>>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Cifar10 {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
        #[serde(default = "default_cifar_classes")]
        classes: Vec<u8>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

fn default_cifar_classes() -> Vec<u8> {
    vec![0, 1, 2, 3]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval_every: usize,
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            seed,
            eval_every: self.eval_every,
        }
    }
}

/// `train-classifier` (and `eval` of classifiers).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub geometry: GeometryConfig,
    pub network: ClassifierNetwork,
    pub data: DatasetConfig,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserNetwork {
    #[serde(default)]
    pub kind: NetworkKind,
    #[serde(default = "default_ocks")]
    pub ocks: [usize; 2],
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default)]
    pub encoding: InputEncoding,
}

fn default_ocks() -> [usize; 2] {
    [8, 8]
}
fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDataConfig {
    /// Directory of `.pgm` training sources.
    pub train_dir: PathBuf,
    /// Directory of `.pgm` test images.
    pub test_dir: PathBuf,
    /// Training sources are center-cropped and resized to this side.
    #[serde(default = "default_image_size")]
    pub train_image_size: usize,
    #[serde(default = "default_image_size")]
    pub test_image_size: usize,
    /// Side of the training images cut from each source.
    #[serde(default = "default_train_crop")]
    pub train_crop: usize,
    /// Training images cut from each source.
    #[serde(default = "one_usize")]
    pub crops_per_source: usize,
}

fn default_image_size() -> usize {
    256
}
fn default_train_crop() -> usize {
    180
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sigma: f64,
    #[serde(default = "default_patches")]
    pub patches_per_image: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Epochs at which the learning rate is divided by 10.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    /// Seed of the test-set noise.
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
}

fn default_patches() -> usize {
    8
}
fn default_patch() -> usize {
    40
}
fn default_eval_seed() -> u64 {
    1000
}

impl DenoiseSection {
    pub fn denoise_config(&self, seed: u64) -> DenoiseConfig {
        DenoiseConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            crops_per_image: self.patches_per_image,
            patch_size: self.patch_size,
            sigma: self.sigma,
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            lr_milestones: self.lr_milestones.clone(),
            seed,
        }
    }
}

/// `train-denoiser` (and `eval` of denoisers).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub geometry: GeometryConfig,
    #[serde(default = "default_denoiser_network")]
    pub network: DenoiserNetwork,
    pub data: ImageDataConfig,
    pub train: DenoiseSection,
}

fn default_denoiser_network() -> DenoiserNetwork {
    DenoiserNetwork {
        kind: NetworkKind::Optical,
        ocks: default_ocks(),
        kernel_size: default_kernel(),
        encoding: InputEncoding::default(),
    }
}

impl DenoiserNetwork {
    pub fn topology(&self, patch_size: usize) -> DenoiserTopology {
        DenoiserTopology {
            patch_size,
            ocks: self.ocks,
            kernel_size: self.kernel_size,
            encoding: self.encoding,
        }
    }
}

/// `perf`, in human units.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfConfig {
    pub kernel_size: usize,
    pub channels: usize,
    pub ocks: usize,
    pub rate_gbaud: f64,
    pub symbols: f64,
    pub bit_depth: f64,
    pub energy_per_bit_fj: f64,
    pub detector_power_w: f64,
}

impl PerfConfig {
    pub fn spec(&self) -> Result<PerfSpec> {
        let spec = PerfSpec {
            kernel_size: self.kernel_size,
            channels: self.channels,
            ocks: self.ocks,
            rate: self.rate_gbaud * 1e9,
            symbols: self.symbols,
            bit_depth: self.bit_depth,
            energy_per_bit: self.energy_per_bit_fj / 1e15,
            detector_power: self.detector_power_w,
        };
        spec.validate().map_err(|e| OcuError::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// Input shape implied by a classifier preset.
pub fn preset_input(preset: ClassifierPreset) -> Shape {
    match preset {
        ClassifierPreset::FashionMnist => ClassifierTopology::fashion_mnist().input,
        ClassifierPreset::Cifar4 => ClassifierTopology::cifar4().input,
    }
}
