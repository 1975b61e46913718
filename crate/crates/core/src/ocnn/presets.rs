use serde::{Deserialize, Serialize};

use super::layers::{ConvShape, PoolMode, Shape};
use super::network::{LayerSpec, LossKind, NetworkSpec, OclSpec, Task};
use crate::error::{OcuError, Result};
use crate::optics::{InputEncoding, OcuGeometry};

/// OCL → pool → flatten → three dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTopology {
    pub input: Shape,
    pub classes: usize,
    pub ocks: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub pool_window: usize,
    pub pool_mode: PoolMode,
    pub hidden: [usize; 2],
    pub encoding: InputEncoding,
}

impl ClassifierTopology {
    /// 4 OCKs on 28×28 grayscale, 10 classes.
    pub fn fashion_mnist() -> Self {
        Self {
            input: Shape::new(1, 28),
            classes: 10,
            ocks: 4,
            kernel_size: 3,
            stride: 1,
            pool_window: 2,
            pool_mode: PoolMode::Mean,
            hidden: [128, 64],
            encoding: InputEncoding::default(),
        }
    }

    /// 16 OCKs of 3 OCUs on 32×32 RGB, 4 classes.
    pub fn cifar4() -> Self {
        Self {
            input: Shape::new(3, 32),
            classes: 4,
            ocks: 16,
            ..Self::fashion_mnist()
        }
    }

    pub fn spec(&self, geometry: &OcuGeometry) -> Result<NetworkSpec> {
        let shape = ConvShape {
            out_channels: self.ocks,
            in_channels: self.input.channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: 0,
        };
        let conv_out = shape.output_shape(self.input)?;
        if self.pool_window > conv_out.size {
            return Err(OcuError::Config("pool window larger than the feature map".into()));
        }
        let pooled = (conv_out.size - self.pool_window) / self.pool_window + 1;
        let flat = self.ocks * pooled * pooled;
        let [h1, h2] = self.hidden;
        let spec = NetworkSpec {
            input: self.input,
            layers: vec![
                LayerSpec::Optical(OclSpec {
                    shape,
                    encoding: self.encoding,
                    geometry: geometry.clone(),
                }),
                LayerSpec::Pool {
                    window: self.pool_window,
                    stride: self.pool_window,
                    mode: self.pool_mode,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: flat, outputs: h1 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: h1, outputs: h2 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: h2,
                    outputs: self.classes,
                },
            ],
            task: Task::Classification { classes: self.classes },
            loss: LossKind::CrossEntropy,
        };
        spec.shapes()?;
        Ok(spec)
    }
}

/// Residual denoiser: OCL+ReLU → OCL+BN+ReLU → single-OCK OCL, each with
/// one pixel of reflection padding so sizes are preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTopology {
    pub patch_size: usize,
    pub ocks: [usize; 2],
    pub kernel_size: usize,
    pub encoding: InputEncoding,
}

impl Default for DenoiserTopology {
    fn default() -> Self {
        Self {
            patch_size: 40,
            ocks: [8, 8],
            kernel_size: 3,
            encoding: InputEncoding::default(),
        }
    }
}

impl DenoiserTopology {
    pub fn spec(&self, geometry: &OcuGeometry) -> Result<NetworkSpec> {
        if self.kernel_size % 2 == 0 {
            return Err(OcuError::Config("denoiser kernel size must be odd".into()));
        }
        let pad = self.kernel_size / 2;
        let [q1, q2] = self.ocks;
        let ocl = |out_channels, in_channels| {
            LayerSpec::Optical(OclSpec {
                shape: ConvShape {
                    out_channels,
                    in_channels,
                    kernel_size: self.kernel_size,
                    stride: 1,
                    padding: pad,
                },
                encoding: self.encoding,
                geometry: geometry.clone(),
            })
        };
        let spec = NetworkSpec {
            input: Shape::new(1, self.patch_size),
            layers: vec![
                ocl(q1, 1),
                LayerSpec::Relu,
                ocl(q2, q1),
                LayerSpec::BatchNorm { channels: q2 },
                LayerSpec::Relu,
                ocl(1, q2),
            ],
            task: Task::Denoising,
            loss: LossKind::MeanSquared,
        };
        spec.shapes()?;
        Ok(spec)
    }
}
