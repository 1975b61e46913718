//! Optical convolutional networks: OCLs built from OCUs, electrical
//! counterparts, the usual CNN layers and the training loops.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod presets;
pub mod train;

pub use layers::{
    BatchNorm2d, ConvShape, Dense, ElectricalConv, Flatten, Mode, OpticalConv, ParamKind, Pool2d, PoolMode, Relu, Shape,
};
pub use loss::{argmax, classification_loss};
pub use network::{Layer, LayerSpec, LayerState, LossKind, Network, NetworkSpec, OclSpec, Task, UnitState};
pub use presets::{ClassifierTopology, DenoiserTopology};
pub use train::{
    adam_step, denoiser_forward, evaluate_classifier, evaluate_denoiser, predict, train_classifier, train_denoiser,
    ClassifierEpoch, ClassifierReport, DenoiseConfig, DenoiseEpoch, DenoiseOutput, PsnrRow, PsnrTable, TrainConfig,
};
