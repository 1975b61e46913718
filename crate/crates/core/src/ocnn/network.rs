use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    BatchNorm2d, ConvShape, Dense, ElectricalConv, Flatten, Mode, OpticalConv, Pool2d, PoolMode, Relu, Shape, Visitor,
};
use crate::error::{OcuError, Result};
use crate::optics::{InputEncoding, OcuGeometry, OcuModel};
use crate::tensorize::FeatureMap;

/// One OCL: `q` OCKs of `C` OCUs sharing one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OclSpec {
    #[serde(flatten)]
    pub shape: ConvShape,
    #[serde(default)]
    pub encoding: InputEncoding,
    pub geometry: OcuGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Optical(OclSpec),
    Conv(ConvShape),
    Pool {
        window: usize,
        stride: usize,
        #[serde(default)]
        mode: PoolMode,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Classification { classes: usize },
    Denoising,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    MeanSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub task: Task,
    pub loss: LossKind,
}

impl NetworkSpec {
    /// Shape after every layer, checking that neighbours fit together and
    /// that the output matches the task.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer_output_shape(layer, cur).map_err(|e| OcuError::Config(format!("layer {i}: {e}")))?;
            shapes.push(cur);
        }
        match (self.task, self.loss) {
            (Task::Classification { classes }, LossKind::CrossEntropy) => {
                if cur != Shape::new(classes, 1) {
                    return Err(OcuError::Config(format!(
                        "classifier ends in {} channels of size {}, expected {classes} scores",
                        cur.channels, cur.size
                    )));
                }
            }
            (Task::Denoising, LossKind::MeanSquared) => {
                if cur != self.input || self.input.channels != 1 {
                    return Err(OcuError::Config(
                        "denoiser output must be one channel of the input's size".into(),
                    ));
                }
            }
            _ => return Err(OcuError::Config("loss does not match task".into())),
        }
        Ok(shapes)
    }

    /// The electrical twin: every OCL replaced by an ordinary convolution
    /// of the same shape.
    pub fn to_electrical(&self) -> NetworkSpec {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Optical(o) => LayerSpec::Conv(o.shape),
                other => other.clone(),
            })
            .collect();
        NetworkSpec {
            layers,
            ..self.clone()
        }
    }

    pub fn is_optical(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Optical(_)))
    }
}

fn layer_output_shape(layer: &LayerSpec, input: Shape) -> Result<Shape> {
    match layer {
        LayerSpec::Optical(o) => o.shape.output_shape(input),
        LayerSpec::Conv(s) => s.output_shape(input),
        LayerSpec::Pool { window, stride, mode } => Pool2d::new(*window, *stride, *mode)?.output_shape(input),
        LayerSpec::BatchNorm { channels } => {
            if *channels != input.channels {
                return Err(OcuError::dims("batchnorm channels", *channels, input.channels));
            }
            Ok(input)
        }
        LayerSpec::Relu => Ok(input),
        LayerSpec::Flatten => Ok(Shape::new(input.len(), 1)),
        LayerSpec::Dense { inputs, outputs } => {
            if input.len() != *inputs || input.size != 1 {
                return Err(OcuError::dims("dense input length", *inputs, input.len()));
            }
            Ok(Shape::new(*outputs, 1))
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Optical(OpticalConv),
    Conv(ElectricalConv),
    Pool(Pool2d),
    BatchNorm(BatchNorm2d),
    Relu(Relu),
    Flatten(Flatten),
    Dense(Dense),
}

impl Layer {
    pub fn build<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            LayerSpec::Optical(o) => Layer::Optical(OpticalConv::new(o.shape, o.geometry.clone(), o.encoding, rng)?),
            LayerSpec::Conv(s) => Layer::Conv(ElectricalConv::new(*s, rng)?),
            LayerSpec::Pool { window, stride, mode } => Layer::Pool(Pool2d::new(*window, *stride, *mode)?),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(*channels)),
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::new(*inputs, *outputs, rng)?),
        })
    }

    pub fn forward(&mut self, x: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        match self {
            Layer::Optical(l) => l.forward(x, mode),
            Layer::Conv(l) => l.forward(x, mode),
            Layer::Pool(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x, mode)),
            Layer::Flatten(l) => Ok(l.forward(x)),
            Layer::Dense(l) => l.forward(x, mode),
        }
    }

    /// Returns the input gradient when `need_input_grad` is set.
    pub fn backward(&mut self, g: &[FeatureMap], need_input_grad: bool) -> Result<Option<Vec<FeatureMap>>> {
        match self {
            Layer::Optical(l) => l.backward(g, need_input_grad),
            Layer::Conv(l) => l.backward(g, need_input_grad),
            Layer::Pool(l) => l.backward(g).map(Some),
            Layer::BatchNorm(l) => l.backward(g).map(Some),
            Layer::Relu(l) => l.backward(g).map(Some),
            Layer::Flatten(l) => l.backward(g).map(Some),
            Layer::Dense(l) => l.backward(g, need_input_grad),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Optical(l) => l.zero_grad(),
            Layer::Conv(l) => l.zero_grad(),
            Layer::BatchNorm(l) => l.zero_grad(),
            Layer::Dense(l) => l.zero_grad(),
            Layer::Pool(_) | Layer::Relu(_) | Layer::Flatten(_) => {}
        }
    }

    pub fn visit_params(&mut self, f: &mut Visitor<'_>) {
        match self {
            Layer::Optical(l) => l.visit_params(f),
            Layer::Conv(l) => l.visit_params(f),
            Layer::BatchNorm(l) => l.visit_params(f),
            Layer::Dense(l) => l.visit_params(f),
            Layer::Pool(_) | Layer::Relu(_) | Layer::Flatten(_) => {}
        }
    }

    pub fn state(&self) -> LayerState {
        match self {
            Layer::Optical(l) => LayerState::Optical {
                units: l
                    .units()
                    .iter()
                    .map(|u| UnitState {
                        phases: u.phases().to_vec(),
                        gain: u.gain(),
                    })
                    .collect(),
            },
            Layer::Conv(l) => LayerState::Conv {
                weights: l.weights().to_vec(),
            },
            Layer::BatchNorm(l) => LayerState::BatchNorm {
                gamma: l.gamma.clone(),
                beta: l.beta.clone(),
                running_mean: l.running_mean.clone(),
                running_var: l.running_var.clone(),
            },
            Layer::Dense(l) => LayerState::Dense {
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            },
            Layer::Pool(_) | Layer::Relu(_) | Layer::Flatten(_) => LayerState::Stateless,
        }
    }

    pub fn load_state(&mut self, state: &LayerState) -> Result<()> {
        let mismatch = || OcuError::InvalidArgument("layer state does not match layer kind".into());
        match (self, state) {
            (Layer::Optical(l), LayerState::Optical { units }) => {
                if units.len() != l.units().len() {
                    return Err(OcuError::dims("OCL unit states", l.units().len(), units.len()));
                }
                let rebuilt = l
                    .units()
                    .iter()
                    .zip(units)
                    .map(|(u, s)| OcuModel::from_parts(u.cascade().clone(), s.phases.clone(), s.gain))
                    .collect::<Result<Vec<_>>>()?;
                *l = OpticalConv::from_units(l.shape(), l.encoding(), rebuilt)?;
            }
            (Layer::Conv(l), LayerState::Conv { weights }) => {
                *l = ElectricalConv::from_weights(l.shape(), weights.clone())?;
            }
            (
                Layer::BatchNorm(l),
                LayerState::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                },
            ) => {
                let c = l.channels();
                for v in [gamma, beta, running_mean, running_var] {
                    if v.len() != c {
                        return Err(OcuError::dims("batchnorm state", c, v.len()));
                    }
                }
                l.gamma.clone_from(gamma);
                l.beta.clone_from(beta);
                l.running_mean.clone_from(running_mean);
                l.running_var.clone_from(running_var);
            }
            (Layer::Dense(l), LayerState::Dense { weights, bias }) => {
                *l = Dense::from_parts(l.inputs(), l.outputs(), weights.clone(), bias.clone())?;
            }
            (Layer::Pool(_) | Layer::Relu(_) | Layer::Flatten(_), LayerState::Stateless) => {}
            _ => return Err(mismatch()),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    pub phases: Vec<Vec<f64>>,
    pub gain: f64,
}

/// Trainable values of one layer, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerState {
    Optical {
        units: Vec<UnitState>,
    },
    Conv {
        weights: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Dense {
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Stateless,
}

/// A feed-forward stack of layers with manual backpropagation.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    calibrated: bool,
}

impl Network {
    pub fn build<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.shapes()?;
        let layers = spec.layers.iter().map(|l| Layer::build(l, rng)).collect::<Result<_>>()?;
        Ok(Self {
            spec,
            layers,
            calibrated: false,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    pub fn mark_calibrated(&mut self) {
        self.calibrated = true;
    }

    /// Sets the detection gains of every OCL from the activations it sees
    /// on `batch`, front to back.
    pub fn calibrate(&mut self, batch: &[FeatureMap]) -> Result<()> {
        let mut x = batch.to_vec();
        for layer in &mut self.layers {
            x = match layer {
                Layer::Optical(l) => {
                    l.calibrate_gains(&x)?;
                    l.forward(&x, Mode::Eval)?
                }
                // batch statistics, as in training, without touching the running ones
                Layer::BatchNorm(l) if x.len() > 1 => l.clone().forward(&x, Mode::Train)?,
                other => other.forward(&x, Mode::Eval)?,
            };
        }
        self.calibrated = true;
        Ok(())
    }

    /// Rescales the last convolution so the output RMS on `batch` matches
    /// the RMS of `targets`. Returns the factor applied.
    pub fn match_output_scale(&mut self, batch: &[FeatureMap], targets: &[FeatureMap]) -> Result<f64> {
        let out = self.clone().forward(batch, Mode::Train)?;
        let rms = |maps: &[FeatureMap]| {
            let n: usize = maps.iter().map(FeatureMap::len).sum();
            (maps.iter().flat_map(|m| m.data()).map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt()
        };
        let (have, want) = (rms(&out), rms(targets));
        if !(have > 0.0 && want > 0.0 && have.is_finite()) {
            return Ok(1.0);
        }
        let factor = want / have;
        match self.layers.last_mut() {
            Some(Layer::Optical(l)) => {
                // detection is linear in κ
                for unit in l.units_mut() {
                    unit.set_gain(unit.gain() * factor);
                }
            }
            Some(Layer::Conv(l)) => l.weights_mut().iter_mut().for_each(|w| *w *= factor),
            _ => return Ok(1.0),
        }
        Ok(factor)
    }

    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        let input = self.spec.input;
        // fully convolutional denoisers accept any image size
        let size_free = self.spec.task == Task::Denoising;
        for fm in batch {
            let ok = if size_free {
                fm.channels() == input.channels
            } else {
                Shape::of(fm) == input
            };
            if !ok {
                return Err(OcuError::InvalidArgument(format!(
                    "network expects {}×{}×{} inputs, got {}×{}×{}",
                    input.channels,
                    input.size,
                    input.size,
                    fm.channels(),
                    fm.size(),
                    fm.size()
                )));
            }
        }
        if batch.is_empty() {
            return Err(OcuError::InvalidArgument("empty batch".into()));
        }
        let mut x = self.layers[0].forward(batch, mode)?;
        for layer in &mut self.layers[1..] {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients for the last training-mode forward.
    pub fn backward(&mut self, grad_out: Vec<FeatureMap>) -> Result<()> {
        let mut g = grad_out;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let need = i > 0;
            match layer.backward(&g, need)? {
                Some(next) => g = next,
                None => debug_assert!(i == 0 || n == 0),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    /// Visits every parameter group in a fixed order.
    pub fn visit_params(&mut self, f: &mut Visitor<'_>) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p, _| n += p.len());
        n
    }

    pub fn state(&self) -> Vec<LayerState> {
        self.layers.iter().map(Layer::state).collect()
    }

    /// Rebuilds a network from saved parameters.
    pub fn from_state(spec: NetworkSpec, states: &[LayerState]) -> Result<Self> {
        use rand::SeedableRng;
        let mut net = Self::build(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        net.load_state(states)?;
        Ok(net)
    }

    pub fn load_state(&mut self, states: &[LayerState]) -> Result<()> {
        if states.len() != self.layers.len() {
            return Err(OcuError::dims("layer states", self.layers.len(), states.len()));
        }
        for (layer, s) in self.layers.iter_mut().zip(states) {
            layer.load_state(s)?;
        }
        self.calibrated = true;
        Ok(())
    }
}
