use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};
use crate::optics::{
    accumulate_detect, backprop_detect, total_port_power, Cascade, ComplexMatrix, InputEncoding, OcuGeometry, OcuModel,
    SystemGrad,
};
use crate::tensorize::{col2im_adjoint, feature_dim, im2col, reflect_pad, reflect_pad_adjoint, FeatureMap, PatchMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a parameter group is, so optimizers and checkers can treat some
/// groups specially (κ is kept positive by stepping in log space).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Phase,
    Gain,
    Weight,
    Bias,
    Scale,
    Shift,
}

/// `(channels, size)` of a square activation; vectors have size 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub size: usize,
}

impl Shape {
    pub fn new(channels: usize, size: usize) -> Self {
        Self { channels, size }
    }

    pub fn of(fm: &FeatureMap) -> Self {
        Self::new(fm.channels(), fm.size())
    }

    pub fn len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type Visitor<'a> = dyn FnMut(ParamKind, &mut [f64], &[f64]) + 'a;

fn check_batch(batch: &[FeatureMap], expected: Shape, context: &'static str) -> Result<()> {
    if batch.is_empty() {
        return Err(OcuError::InvalidArgument(format!("{context}: empty batch")));
    }
    for fm in batch {
        if fm.channels() != expected.channels {
            return Err(OcuError::dims(context, expected.channels, fm.channels()));
        }
        if fm.size() != expected.size {
            return Err(OcuError::dims(context, expected.size, fm.size()));
        }
    }
    Ok(())
}

fn missing_cache(layer: &str) -> OcuError {
    OcuError::InvalidArgument(format!("{layer}: backward called without a training-mode forward"))
}

/// Shape bookkeeping shared by the optical and electrical convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// Reflection padding applied before patching.
    pub padding: usize,
}

impl ConvShape {
    fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.in_channels == 0 || self.kernel_size == 0 || self.stride == 0 {
            return Err(OcuError::InvalidArgument(
                "convolution channels, kernel size and stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(OcuError::dims("convolution input channels", self.in_channels, input.channels));
        }
        if self.padding > 0 && self.padding >= input.size {
            return Err(OcuError::InvalidArgument(format!(
                "padding {} too large for {}-pixel input",
                self.padding, input.size
            )));
        }
        let g = feature_dim(input.size + 2 * self.padding, self.kernel_size, self.stride)?;
        Ok(Shape::new(self.out_channels, g))
    }

    fn patches(&self, fm: &FeatureMap) -> Result<PatchMatrix> {
        let img = fm.as_image_unchecked();
        if self.padding > 0 {
            im2col(&reflect_pad(&img, self.padding)?, self.kernel_size, self.stride)
        } else {
            im2col(&img, self.kernel_size, self.stride)
        }
    }

    fn input_grad(&self, grad_patches: &[f64], patches: &PatchMatrix) -> FeatureMap {
        let padded = col2im_adjoint(grad_patches, patches.layout());
        if self.padding > 0 {
            reflect_pad_adjoint(&padded, self.padding)
        } else {
            padded
        }
    }
}

struct ConvCache {
    raw: Vec<PatchMatrix>,
    encoded: Vec<PatchMatrix>,
    systems: Vec<ComplexMatrix>,
}

/// Optical convolution layer: `q` OCKs of `C` OCUs each. OCU `(m, n)`
/// maps input channel `n` to output channel `m`; the `C` detected outputs
/// of an OCK are summed.
#[derive(Clone)]
pub struct OpticalConv {
    shape: ConvShape,
    encoding: InputEncoding,
    units: Vec<OcuModel>,
    phase_grads: Vec<Vec<Vec<f64>>>,
    gain_grads: Vec<f64>,
    cache: Option<Arc<ConvCache>>,
}

impl std::fmt::Debug for OpticalConv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpticalConv")
            .field("shape", &self.shape)
            .field("encoding", &self.encoding)
            .finish_non_exhaustive()
    }
}

impl OpticalConv {
    /// Random phases in `[0, 2π)` and unit gains.
    pub fn new<R: Rng + ?Sized>(shape: ConvShape, geometry: OcuGeometry, encoding: InputEncoding, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let h2 = shape.kernel_size * shape.kernel_size;
        if geometry.num_inputs != h2 {
            return Err(OcuError::dims("OCL geometry input ports", h2, geometry.num_inputs));
        }
        let cascade = Cascade::new(geometry)?;
        let units = (0..shape.out_channels * shape.in_channels)
            .map(|_| {
                let mut m = OcuModel::flat(cascade.clone());
                for line in m.phases_mut() {
                    for p in line.iter_mut() {
                        *p = rng.gen::<f64>() * 2.0 * PI;
                    }
                }
                m
            })
            .collect();
        Self::from_units(shape, encoding, units)
    }

    pub fn from_units(shape: ConvShape, encoding: InputEncoding, units: Vec<OcuModel>) -> Result<Self> {
        shape.validate()?;
        if units.len() != shape.out_channels * shape.in_channels {
            return Err(OcuError::dims("OCL units", shape.out_channels * shape.in_channels, units.len()));
        }
        let h2 = shape.kernel_size * shape.kernel_size;
        if let Some(u) = units.iter().find(|u| u.num_inputs() != h2) {
            return Err(OcuError::dims("OCL unit input ports", h2, u.num_inputs()));
        }
        let phase_grads = units.iter().map(|u| u.phases().iter().map(|l| vec![0.0; l.len()]).collect()).collect();
        let gain_grads = vec![0.0; units.len()];
        Ok(Self {
            shape,
            encoding,
            units,
            phase_grads,
            gain_grads,
            cache: None,
        })
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }

    pub fn encoding(&self) -> InputEncoding {
        self.encoding
    }

    pub fn geometry(&self) -> &OcuGeometry {
        self.units[0].geometry()
    }

    pub fn units(&self) -> &[OcuModel] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [OcuModel] {
        &mut self.units
    }

    /// OCU feeding output channel `m` from input channel `n`.
    pub fn unit(&self, m: usize, n: usize) -> &OcuModel {
        &self.units[m * self.shape.in_channels + n]
    }

    pub fn unit_mut(&mut self, m: usize, n: usize) -> &mut OcuModel {
        &mut self.units[m * self.shape.in_channels + n]
    }

    /// Sets every κ so each OCU's mean total detected power on `batch` is
    /// `1/C`, putting the summed OCK output on a unit scale.
    pub fn calibrate_gains(&mut self, batch: &[FeatureMap]) -> Result<()> {
        let input = Shape::new(self.shape.in_channels, batch.first().map_or(0, FeatureMap::size));
        check_batch(batch, input, "OCL calibration")?;
        let encoded: Vec<PatchMatrix> = batch
            .iter()
            .map(|fm| Ok(self.encoding.encode_patches(&self.shape.patches(fm)?)))
            .collect::<Result<_>>()?;
        let c = self.shape.in_channels;
        let gains: Vec<Option<f64>> = self
            .units
            .iter()
            .enumerate()
            .map(|(idx, unit)| {
                let n = idx % c;
                let w = unit.system_matrix();
                let mut power = 0.0;
                let mut count = 0usize;
                for p in &encoded {
                    power += total_port_power(&w, p.channel_block(n), p.cols());
                    count += p.cols();
                }
                let mean = power / count as f64;
                (mean > 0.0 && mean.is_finite()).then(|| 1.0 / (c as f64 * mean))
            })
            .collect();
        // units whose input channel is dark on this batch get the layer mean
        let known: Vec<f64> = gains.iter().flatten().copied().collect();
        let fallback = (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64);
        for (unit, g) in self.units.iter_mut().zip(gains) {
            if let Some(g) = g.or(fallback) {
                unit.set_gain(g);
            }
        }
        Ok(())
    }

    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        let input = Shape::new(self.shape.in_channels, batch.first().map_or(0, FeatureMap::size));
        check_batch(batch, input, "OCL input")?;
        let out_shape = self.shape.output_shape(input)?;
        let systems: Vec<ComplexMatrix> = self.units.iter().map(OcuModel::system_matrix).collect();
        let (q, c) = (self.shape.out_channels, self.shape.in_channels);
        let mut raw_all = Vec::new();
        let mut enc_all = Vec::new();
        let mut outputs = Vec::with_capacity(batch.len());
        for fm in batch {
            let raw = self.shape.patches(fm)?;
            let enc = self.encoding.encode_patches(&raw);
            let cols = enc.cols();
            let mut out = FeatureMap::zeros(out_shape.size, q);
            for m in 0..q {
                let dst = out.channel_mut(m);
                for n in 0..c {
                    let idx = m * c + n;
                    accumulate_detect(&systems[idx], self.units[idx].gain(), enc.channel_block(n), cols, dst);
                }
            }
            outputs.push(out);
            if mode == Mode::Train {
                raw_all.push(raw);
                enc_all.push(enc);
            }
        }
        self.cache = match mode {
            Mode::Train => Some(Arc::new(ConvCache {
                raw: raw_all,
                encoded: enc_all,
                systems,
            })),
            Mode::Eval => None,
        };
        Ok(outputs)
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap], need_input_grad: bool) -> Result<Option<Vec<FeatureMap>>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("OCL"))?;
        if grad_out.len() != cache.encoded.len() {
            return Err(OcuError::dims("OCL backward batch", cache.encoded.len(), grad_out.len()));
        }
        let (q, c) = (self.shape.out_channels, self.shape.in_channels);
        let h2 = self.shape.kernel_size * self.shape.kernel_size;
        let mut sys_grads: Vec<SystemGrad> = (0..q * c).map(|_| SystemGrad::zeros(h2)).collect();
        let mut input_grads = Vec::new();
        for (i, g) in grad_out.iter().enumerate() {
            let enc = &cache.encoded[i];
            let cols = enc.cols();
            if g.channels() != q || g.size() * g.size() != cols {
                return Err(OcuError::dims("OCL backward gradient", q * cols, g.len()));
            }
            let mut grad_block = if need_input_grad { vec![0.0; enc.rows() * cols] } else { Vec::new() };
            for m in 0..q {
                let gm = g.channel(m);
                for n in 0..c {
                    let idx = m * c + n;
                    let gb = if need_input_grad {
                        Some(&mut grad_block[n * h2 * cols..(n + 1) * h2 * cols])
                    } else {
                        None
                    };
                    backprop_detect(
                        &cache.systems[idx],
                        self.units[idx].gain(),
                        enc.channel_block(n),
                        cols,
                        gm,
                        &mut sys_grads[idx],
                        gb,
                    );
                }
            }
            if need_input_grad {
                let raw = &cache.raw[i];
                for (gv, &v) in grad_block.iter_mut().zip(raw.data()) {
                    *gv *= self.encoding.derivative(v);
                }
                input_grads.push(self.shape.input_grad(&grad_block, raw));
            }
        }
        for (idx, sg) in sys_grads.iter().enumerate() {
            let phases = self.units[idx].phase_gradients_from_system(&sg.system);
            for (acc, g) in self.phase_grads[idx].iter_mut().zip(phases) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            self.gain_grads[idx] += sg.gain;
        }
        Ok(need_input_grad.then_some(input_grads))
    }

    pub fn zero_grad(&mut self) {
        for unit in &mut self.phase_grads {
            for line in unit {
                line.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        self.gain_grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn visit_params(&mut self, f: &mut Visitor<'_>) {
        for (idx, unit) in self.units.iter_mut().enumerate() {
            for (line, g) in unit.phases_mut().iter_mut().zip(&self.phase_grads[idx]) {
                f(ParamKind::Phase, line, g);
            }
            f(ParamKind::Gain, std::slice::from_mut(unit.gain_mut()), &[self.gain_grads[idx]]);
        }
    }
}

/// Ordinary real-valued convolution with the same shape as an OCL, no bias.
#[derive(Debug, Clone)]
pub struct ElectricalConv {
    shape: ConvShape,
    /// `[m][n][k]` flattened: output channel, input channel, window tap.
    weights: Vec<f64>,
    grads: Vec<f64>,
    cache: Option<Vec<PatchMatrix>>,
}

impl ElectricalConv {
    /// Weights uniform in `±1/√(C·H²)`.
    pub fn new<R: Rng + ?Sized>(shape: ConvShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let fan_in = shape.in_channels * shape.kernel_size * shape.kernel_size;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..shape.out_channels * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::from_weights(shape, weights)
    }

    pub fn from_weights(shape: ConvShape, weights: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let n = shape.out_channels * shape.in_channels * shape.kernel_size * shape.kernel_size;
        if weights.len() != n {
            return Err(OcuError::dims("convolution weights", n, weights.len()));
        }
        Ok(Self {
            shape,
            grads: vec![0.0; n],
            weights,
            cache: None,
        })
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        let input = Shape::new(self.shape.in_channels, batch.first().map_or(0, FeatureMap::size));
        check_batch(batch, input, "convolution input")?;
        let out_shape = self.shape.output_shape(input)?;
        let (q, c) = (self.shape.out_channels, self.shape.in_channels);
        let h2 = self.shape.kernel_size * self.shape.kernel_size;
        let mut cache = Vec::new();
        let mut outputs = Vec::with_capacity(batch.len());
        for fm in batch {
            let p = self.shape.patches(fm)?;
            let cols = p.cols();
            let mut out = FeatureMap::zeros(out_shape.size, q);
            for m in 0..q {
                let dst = out.channel_mut(m);
                for row in 0..c * h2 {
                    let w = self.weights[m * c * h2 + row];
                    let src = &p.data()[row * cols..(row + 1) * cols];
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d += w * x;
                    }
                }
            }
            outputs.push(out);
            if mode == Mode::Train {
                cache.push(p);
            }
        }
        self.cache = (mode == Mode::Train).then_some(cache);
        Ok(outputs)
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap], need_input_grad: bool) -> Result<Option<Vec<FeatureMap>>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("convolution"))?;
        if grad_out.len() != cache.len() {
            return Err(OcuError::dims("convolution backward batch", cache.len(), grad_out.len()));
        }
        let (q, c) = (self.shape.out_channels, self.shape.in_channels);
        let rows = c * self.shape.kernel_size * self.shape.kernel_size;
        let mut input_grads = Vec::new();
        for (p, g) in cache.iter().zip(grad_out) {
            let cols = p.cols();
            if g.channels() != q || g.size() * g.size() != cols {
                return Err(OcuError::dims("convolution backward gradient", q * cols, g.len()));
            }
            let mut grad_patches = if need_input_grad { vec![0.0; rows * cols] } else { Vec::new() };
            for m in 0..q {
                let gm = g.channel(m);
                for row in 0..rows {
                    let src = &p.data()[row * cols..(row + 1) * cols];
                    self.grads[m * rows + row] += gm.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    if need_input_grad {
                        let w = self.weights[m * rows + row];
                        for (d, &gv) in grad_patches[row * cols..(row + 1) * cols].iter_mut().zip(gm) {
                            *d += w * gv;
                        }
                    }
                }
            }
            if need_input_grad {
                input_grads.push(self.shape.input_grad(&grad_patches, p));
            }
        }
        Ok(need_input_grad.then_some(input_grads))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn visit_params(&mut self, f: &mut Visitor<'_>) {
        f(ParamKind::Weight, &mut self.weights, &self.grads);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone)]
pub struct Pool2d {
    pub window: usize,
    pub stride: usize,
    pub mode: PoolMode,
    cache: Option<(Shape, Vec<Vec<usize>>)>,
}

impl Pool2d {
    pub fn new(window: usize, stride: usize, mode: PoolMode) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(OcuError::InvalidArgument("pool window and stride must be at least 1".into()));
        }
        Ok(Self {
            window,
            stride,
            mode,
            cache: None,
        })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.window > input.size {
            return Err(OcuError::InvalidArgument(format!(
                "pool window {} larger than {}-pixel map",
                self.window, input.size
            )));
        }
        Ok(Shape::new(input.channels, (input.size - self.window) / self.stride + 1))
    }

    fn pool_one(&self, fm: &FeatureMap, out_size: usize) -> (FeatureMap, Vec<usize>) {
        let n = fm.size();
        let mut out = FeatureMap::zeros(out_size, fm.channels());
        let mut argmax = Vec::new();
        let area = (self.window * self.window) as f64;
        for c in 0..fm.channels() {
            let src = fm.channel(c);
            for oy in 0..out_size {
                for ox in 0..out_size {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let value = match self.mode {
                        PoolMode::Mean => {
                            let mut s = 0.0;
                            for y in y0..y0 + self.window {
                                for x in x0..x0 + self.window {
                                    s += src[y * n + x];
                                }
                            }
                            s / area
                        }
                        PoolMode::Max => {
                            let mut best = y0 * n + x0;
                            for y in y0..y0 + self.window {
                                for x in x0..x0 + self.window {
                                    if src[y * n + x] > src[best] {
                                        best = y * n + x;
                                    }
                                }
                            }
                            argmax.push(c * n * n + best);
                            src[best]
                        }
                    };
                    out.channel_mut(c)[oy * out_size + ox] = value;
                }
            }
        }
        (out, argmax)
    }

    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        let input = Shape::of(batch.first().ok_or_else(|| OcuError::InvalidArgument("pool: empty batch".into()))?);
        check_batch(batch, input, "pool input")?;
        let out = self.output_shape(input)?;
        let mut outputs = Vec::with_capacity(batch.len());
        let mut indices = Vec::new();
        for fm in batch {
            let (o, idx) = self.pool_one(fm, out.size);
            outputs.push(o);
            indices.push(idx);
        }
        self.cache = (mode == Mode::Train).then_some((input, indices));
        Ok(outputs)
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        let (input, indices) = self.cache.take().ok_or_else(|| missing_cache("pool"))?;
        let n = input.size;
        let area = (self.window * self.window) as f64;
        grad_out
            .iter()
            .zip(&indices)
            .map(|(g, idx)| {
                let mut dx = FeatureMap::zeros(n, input.channels);
                let gs = g.size();
                match self.mode {
                    PoolMode::Mean => {
                        for c in 0..input.channels {
                            let gc = g.channel(c).to_vec();
                            let dst = dx.channel_mut(c);
                            for oy in 0..gs {
                                for ox in 0..gs {
                                    let v = gc[oy * gs + ox] / area;
                                    for y in oy * self.stride..oy * self.stride + self.window {
                                        for x in ox * self.stride..ox * self.stride + self.window {
                                            dst[y * n + x] += v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    PoolMode::Max => {
                        let data = dx.data_mut();
                        for (&i, &v) in idx.iter().zip(g.data()) {
                            data[i] += v;
                        }
                    }
                }
                Ok(dx)
            })
            .collect()
    }
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    grad_gamma: Vec<f64>,
    grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Vec<FeatureMap>,
    inv_std: Vec<f64>,
}

pub const BN_EPSILON: f64 = 1e-5;

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: BN_EPSILON,
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        let first = batch.first().ok_or_else(|| OcuError::InvalidArgument("batchnorm: empty batch".into()))?;
        let input = Shape::new(self.channels(), first.size());
        check_batch(batch, input, "batchnorm input")?;
        let channels = self.channels();
        match mode {
            Mode::Eval => Ok(batch
                .iter()
                .map(|fm| {
                    let mut out = fm.clone();
                    for c in 0..channels {
                        let inv = 1.0 / (self.running_var[c] + self.epsilon).sqrt();
                        let (m, g, b) = (self.running_mean[c], self.gamma[c], self.beta[c]);
                        out.channel_mut(c).iter_mut().for_each(|v| *v = g * (*v - m) * inv + b);
                    }
                    out
                })
                .collect()),
            Mode::Train => {
                if batch.len() < 2 {
                    return Err(OcuError::InvalidArgument("batchnorm training needs a batch of at least 2".into()));
                }
                let count = (batch.len() * first.size() * first.size()) as f64;
                let mut normalized: Vec<FeatureMap> = batch.to_vec();
                let mut outputs: Vec<FeatureMap> = batch.to_vec();
                let mut inv_std = vec![0.0; channels];
                for c in 0..channels {
                    let mean = batch.iter().flat_map(|fm| fm.channel(c)).sum::<f64>() / count;
                    let var = batch.iter().flat_map(|fm| fm.channel(c)).map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                    let inv = 1.0 / (var + self.epsilon).sqrt();
                    inv_std[c] = inv;
                    for (xn, y) in normalized.iter_mut().zip(outputs.iter_mut()) {
                        for (a, b) in xn.channel_mut(c).iter_mut().zip(y.channel_mut(c)) {
                            *a = (*a - mean) * inv;
                            *b = self.gamma[c] * *a + self.beta[c];
                        }
                    }
                    let unbiased = var * count / (count - 1.0);
                    self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
                    self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
                }
                self.cache = Some(BnCache { normalized, inv_std });
                Ok(outputs)
            }
        }
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
        if grad_out.len() != cache.normalized.len() {
            return Err(OcuError::dims("batchnorm backward batch", cache.normalized.len(), grad_out.len()));
        }
        let size = cache.normalized[0].size();
        let count = (grad_out.len() * size * size) as f64;
        let mut dx: Vec<FeatureMap> = grad_out.to_vec();
        for c in 0..self.channels() {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for (g, xn) in grad_out.iter().zip(&cache.normalized) {
                for (a, b) in g.channel(c).iter().zip(xn.channel(c)) {
                    sum_g += a;
                    sum_gx += a * b;
                }
            }
            self.grad_beta[c] += sum_g;
            self.grad_gamma[c] += sum_gx;
            let scale = self.gamma[c] * cache.inv_std[c] / count;
            for (d, xn) in dx.iter_mut().zip(&cache.normalized) {
                for (v, x) in d.channel_mut(c).iter_mut().zip(xn.channel(c)) {
                    *v = scale * (count * *v - sum_g - x * sum_gx);
                }
            }
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.iter_mut().for_each(|g| *g = 0.0);
        self.grad_beta.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn visit_params(&mut self, f: &mut Visitor<'_>) {
        f(ParamKind::Scale, &mut self.gamma, &self.grad_gamma);
        f(ParamKind::Shift, &mut self.beta, &self.grad_beta);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache: Option<Vec<FeatureMap>>,
}

impl Relu {
    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Vec<FeatureMap> {
        let out: Vec<FeatureMap> = batch
            .iter()
            .map(|fm| {
                let mut o = fm.clone();
                o.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                o
            })
            .collect();
        self.cache = (mode == Mode::Train).then(|| batch.to_vec());
        out
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        let inputs = self.cache.take().ok_or_else(|| missing_cache("relu"))?;
        Ok(grad_out
            .iter()
            .zip(&inputs)
            .map(|(g, x)| {
                let mut d = g.clone();
                for (v, &xi) in d.data_mut().iter_mut().zip(x.data()) {
                    if xi <= 0.0 {
                        *v = 0.0;
                    }
                }
                d
            })
            .collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input: Option<Shape>,
}

impl Flatten {
    pub fn forward(&mut self, batch: &[FeatureMap]) -> Vec<FeatureMap> {
        self.input = batch.first().map(Shape::of);
        batch.iter().map(|fm| FeatureMap::from_vector(fm.data().to_vec())).collect()
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        let s = self.input.ok_or_else(|| missing_cache("flatten"))?;
        grad_out.iter().map(|g| FeatureMap::new(s.size, s.channels, g.data().to_vec())).collect()
    }
}

/// Affine map `y = W x + b` on vectors.
#[derive(Debug, Clone)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    cache: Option<Vec<FeatureMap>>,
}

impl Dense {
    /// Weights and biases uniform in `±1/√inputs`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(OcuError::InvalidArgument("dense layer needs at least one input and output".into()));
        }
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..outputs).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::from_parts(inputs, outputs, weights, bias)
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(OcuError::dims("dense weights", inputs * outputs, weights.len()));
        }
        if bias.len() != outputs {
            return Err(OcuError::dims("dense bias", outputs, bias.len()));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            grad_w: vec![0.0; inputs * outputs],
            grad_b: vec![0.0; outputs],
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.len() != self.inputs || input.size != 1 {
            return Err(OcuError::dims("dense input length", self.inputs, input.len()));
        }
        Ok(Shape::new(self.outputs, 1))
    }

    pub fn forward(&mut self, batch: &[FeatureMap], mode: Mode) -> Result<Vec<FeatureMap>> {
        let out = batch
            .iter()
            .map(|x| {
                if x.len() != self.inputs {
                    return Err(OcuError::dims("dense input length", self.inputs, x.len()));
                }
                let xs = x.data();
                let y = (0..self.outputs)
                    .map(|o| {
                        let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                        self.bias[o] + row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                Ok(FeatureMap::from_vector(y))
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache = (mode == Mode::Train).then(|| batch.to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &[FeatureMap], need_input_grad: bool) -> Result<Option<Vec<FeatureMap>>> {
        let inputs = self.cache.take().ok_or_else(|| missing_cache("dense"))?;
        let mut dx = Vec::new();
        for (g, x) in grad_out.iter().zip(&inputs) {
            if g.len() != self.outputs {
                return Err(OcuError::dims("dense backward gradient", self.outputs, g.len()));
            }
            let gs = g.data();
            for (o, &go) in gs.iter().enumerate() {
                self.grad_b[o] += go;
                let row = &mut self.grad_w[o * self.inputs..(o + 1) * self.inputs];
                for (gw, &xv) in row.iter_mut().zip(x.data()) {
                    *gw += go * xv;
                }
            }
            if need_input_grad {
                let mut d = vec![0.0; self.inputs];
                for (o, &go) in gs.iter().enumerate() {
                    let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                    for (dv, &w) in d.iter_mut().zip(row) {
                        *dv += go * w;
                    }
                }
                dx.push(FeatureMap::from_vector(d));
            }
        }
        Ok(need_input_grad.then_some(dx))
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.iter_mut().for_each(|g| *g = 0.0);
        self.grad_b.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn visit_params(&mut self, f: &mut Visitor<'_>) {
        f(ParamKind::Weight, &mut self.weights, &self.grad_w);
        f(ParamKind::Bias, &mut self.bias, &self.grad_b);
    }
}
