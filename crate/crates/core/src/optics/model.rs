use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::complex::ComplexMatrix;
use super::diffraction::diffraction_matrix;
use super::geometry::{layout_positions, Layout, OcuGeometry};
use crate::error::{OcuError, Result};
use crate::tensorize::PatchMatrix;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Below this pixel value the intensity encoding is treated as flat.
pub const INTENSITY_FLOOR: f64 = 1e-12;

/// How a nonnegative pixel value drives the field of its input waveguide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputEncoding {
    /// Field amplitude equals the pixel value.
    Amplitude,
    /// Optical power equals the pixel value (field amplitude `√v`).
    #[default]
    Intensity,
}

impl InputEncoding {
    /// Field amplitude for a pixel value. Negative values are clamped to 0
    /// under intensity encoding.
    #[inline]
    pub fn encode(self, v: f64) -> f64 {
        match self {
            InputEncoding::Amplitude => v,
            InputEncoding::Intensity => v.max(0.0).sqrt(),
        }
    }

    /// `d encode / dv`. Under intensity encoding the slope is unbounded
    /// near zero; it is taken as 0 for `v <= INTENSITY_FLOOR`.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            InputEncoding::Amplitude => 1.0,
            InputEncoding::Intensity => {
                if v > INTENSITY_FLOOR {
                    0.5 / v.sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn encode_patches(self, patches: &PatchMatrix) -> PatchMatrix {
        match self {
            InputEncoding::Amplitude => patches.clone(),
            InputEncoding::Intensity => patches.map(|v| self.encode(v)),
        }
    }
}

/// Geometry plus the fixed diffraction matrices `F(1) … F(M)`.
///
/// Many OCUs share one geometry, so this is built once and shared behind an
/// `Arc`.
pub struct Cascade {
    geometry: OcuGeometry,
    layout: Layout,
    diffraction: Vec<ComplexMatrix>,
}

impl Cascade {
    pub fn new(geometry: OcuGeometry) -> Result<Arc<Self>> {
        let layout = layout_positions(&geometry)?;
        let planes = layout.planes();
        let diffraction = planes
            .windows(2)
            .map(|w| diffraction_matrix(w[0], w[1], &geometry))
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(Self {
            geometry,
            layout,
            diffraction,
        }))
    }

    pub fn geometry(&self) -> &OcuGeometry {
        &self.geometry
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `F(l)` for `l = 1..=M`.
    pub fn diffraction(&self, l: usize) -> &ComplexMatrix {
        &self.diffraction[l - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.diffraction.len()
    }
}

impl fmt::Debug for Cascade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cascade")
            .field("num_layers", &self.geometry.num_layers)
            .field("metaunits_per_layer", &self.geometry.metaunits_per_layer)
            .field("num_inputs", &self.geometry.num_inputs)
            .finish()
    }
}

/// A single optical convolution unit: shared cascade, trainable metaline
/// phases (radians, unwrapped) and detection gain κ.
#[derive(Clone)]
pub struct OcuModel {
    cascade: Arc<Cascade>,
    phases: Vec<Vec<f64>>,
    gain: f64,
}

impl fmt::Debug for OcuModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcuModel")
            .field("cascade", &self.cascade)
            .field("gain", &self.gain)
            .finish_non_exhaustive()
    }
}

/// Gradient of a scalar loss with respect to an OCU's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OcuGrad {
    pub phases: Vec<Vec<f64>>,
    pub gain: f64,
}

impl OcuModel {
    /// All-zero phases and unit gain.
    pub fn new(geometry: OcuGeometry) -> Result<Self> {
        let cascade = Cascade::new(geometry)?;
        Ok(Self::flat(cascade))
    }

    pub fn flat(cascade: Arc<Cascade>) -> Self {
        let g = cascade.geometry();
        let phases = vec![vec![0.0; g.metaunits_per_layer]; g.num_metalines()];
        Self {
            cascade,
            phases,
            gain: 1.0,
        }
    }

    /// Phases uniform in `[0, 2π)`, unit gain.
    pub fn random<R: Rng + ?Sized>(cascade: Arc<Cascade>, rng: &mut R) -> Self {
        let mut model = Self::flat(cascade);
        for line in &mut model.phases {
            for p in line.iter_mut() {
                *p = rng.gen::<f64>() * 2.0 * PI;
            }
        }
        model
    }

    pub fn from_parts(cascade: Arc<Cascade>, phases: Vec<Vec<f64>>, gain: f64) -> Result<Self> {
        let g = cascade.geometry();
        if phases.len() != g.num_metalines() {
            return Err(OcuError::dims("OcuModel metalines", g.num_metalines(), phases.len()));
        }
        for line in &phases {
            if line.len() != g.metaunits_per_layer {
                return Err(OcuError::dims("OcuModel metaunits", g.metaunits_per_layer, line.len()));
            }
            if line.iter().any(|p| !p.is_finite()) {
                return Err(OcuError::NonFinite("phases"));
            }
        }
        if !gain.is_finite() {
            return Err(OcuError::NonFinite("detection gain"));
        }
        Ok(Self { cascade, phases, gain })
    }

    pub fn cascade(&self) -> &Arc<Cascade> {
        &self.cascade
    }

    pub fn geometry(&self) -> &OcuGeometry {
        self.cascade.geometry()
    }

    pub fn num_inputs(&self) -> usize {
        self.geometry().num_inputs
    }

    pub fn phases(&self) -> &[Vec<f64>] {
        &self.phases
    }

    pub fn phases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.phases
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn set_gain(&mut self, gain: f64) {
        self.gain = gain;
    }

    pub fn gain_mut(&mut self) -> &mut f64 {
        &mut self.gain
    }

    pub fn num_params(&self) -> usize {
        self.phases.iter().map(Vec::len).sum::<usize>() + 1
    }

    /// Diagonal of `T(l)`, `l = 1..M-1`.
    pub fn mask(&self, l: usize) -> Vec<Complex64> {
        self.phases[l - 1].iter().map(|&p| Complex64::from_polar(1.0, p)).collect()
    }

    /// Transfer matrix from the field leaving plane `first` to the field
    /// leaving plane `last`. Plane 0 is the input ports, plane `M` the
    /// detectors; planes in between are metalines whose mask is included
    /// on the outgoing side.
    pub fn segment(&self, first: usize, last: usize) -> Result<ComplexMatrix> {
        let m = self.cascade.num_layers();
        if first >= last || last > m {
            return Err(OcuError::InvalidArgument(format!(
                "segment {first}..{last} outside cascade of {m} layers"
            )));
        }
        let mut acc = self.cascade.diffraction(first + 1).clone();
        if first + 1 < m {
            acc = acc.scale_rows(&self.mask(first + 1))?;
        }
        for l in (first + 2)..=last {
            acc = self.cascade.diffraction(l).matmul(&acc)?;
            if l < m {
                acc = acc.scale_rows(&self.mask(l))?;
            }
        }
        Ok(acc)
    }

    /// The full `2 × H²` transfer matrix of the cascade.
    pub fn system_matrix(&self) -> ComplexMatrix {
        self.segment(0, self.cascade.num_layers())
            .expect("full cascade segment is always valid")
    }

    /// Complex port response `R = F(M)·T(M-1)·…·F(1)·Î` (`2 × G²`).
    /// `patches` are field amplitudes, one row per input port.
    pub fn forward(&self, patches: &PatchMatrix) -> Result<ComplexMatrix> {
        if patches.rows() != self.num_inputs() {
            return Err(OcuError::dims("ocu_forward input ports", self.num_inputs(), patches.rows()));
        }
        self.system_matrix().matmul_real(patches.data(), patches.rows(), patches.cols())
    }

    /// Balanced-detected output for already encoded patches.
    pub fn detect(&self, patches: &PatchMatrix) -> Result<Vec<f64>> {
        balanced_detect(&self.forward(patches)?, self.gain)
    }

    /// Back-propagates `∂L/∂W` (W = system matrix) into the metaline phases.
    ///
    /// `grad_system` uses the convention `∂L/∂Re W + j ∂L/∂Im W`.
    pub fn phase_gradients_from_system(&self, grad_system: &ComplexMatrix) -> Vec<Vec<f64>> {
        let m = self.cascade.num_layers();
        let metalines = m - 1;
        if metalines == 0 {
            return Vec::new();
        }
        let masks: Vec<Vec<Complex64>> = (1..=metalines).map(|l| self.mask(l)).collect();

        // right[l-1]: field arriving at metaline l (before its mask), V × H².
        let mut right = Vec::with_capacity(metalines);
        let mut acc = self.cascade.diffraction(1).clone();
        right.push(acc.clone());
        for l in 2..=metalines {
            acc = self
                .cascade
                .diffraction(l)
                .matmul(&acc.scale_rows(&masks[l - 2]).expect("mask length"))
                .expect("cascade shapes");
            right.push(acc.clone());
        }

        // left[l-1]: map from the field leaving metaline l to the ports, 2 × V.
        let mut left = vec![ComplexMatrix::zeros(0, 0); metalines];
        let mut acc = self.cascade.diffraction(m).clone();
        left[metalines - 1] = acc.clone();
        for l in (1..metalines).rev() {
            acc = acc
                .scale_columns(&masks[l])
                .expect("mask length")
                .matmul(self.cascade.diffraction(l + 1))
                .expect("cascade shapes");
            left[l - 1] = acc.clone();
        }

        let outputs = grad_system.rows();
        let inputs = grad_system.cols();
        (0..metalines)
            .map(|li| {
                let a = &left[li];
                let b = &right[li];
                masks[li]
                    .iter()
                    .enumerate()
                    .map(|(v, &t)| {
                        let mut s = ZERO;
                        for o in 0..outputs {
                            let mut inner = ZERO;
                            for k in 0..inputs {
                                inner += b[(v, k)] * grad_system[(o, k)].conj();
                            }
                            s += a[(o, v)] * inner;
                        }
                        (Complex64::new(0.0, 1.0) * t * s).re
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn ocu_forward(model: &OcuModel, patches: &PatchMatrix) -> Result<ComplexMatrix> {
    model.forward(patches)
}

/// `κ·(|R1|² − |R2|²)` per column.
pub fn balanced_detect(response: &ComplexMatrix, gain: f64) -> Result<Vec<f64>> {
    if response.rows() != 2 {
        return Err(OcuError::dims("balanced_detect rows", 2, response.rows()));
    }
    Ok(response
        .row(0)
        .iter()
        .zip(response.row(1))
        .map(|(p, n)| gain * (p.norm_sqr() - n.norm_sqr()))
        .collect())
}

/// Adds the detected output of one OCU on an encoded `H² × cols` block
/// into `out`. This is the hot path used by the network layers.
pub fn accumulate_detect(w: &ComplexMatrix, gain: f64, block: &[f64], cols: usize, out: &mut [f64]) {
    let inputs = w.cols();
    debug_assert_eq!(block.len(), inputs * cols);
    let mut pos = vec![ZERO; cols];
    let mut neg = vec![ZERO; cols];
    port_fields(w, block, cols, &mut pos, &mut neg);
    for ((o, p), n) in out.iter_mut().zip(&pos).zip(&neg) {
        *o += gain * (p.norm_sqr() - n.norm_sqr());
    }
}

/// `Σ (|R1|² + |R2|²)` over all columns of an encoded block.
pub fn total_port_power(w: &ComplexMatrix, block: &[f64], cols: usize) -> f64 {
    let mut pos = vec![ZERO; cols];
    let mut neg = vec![ZERO; cols];
    port_fields(w, block, cols, &mut pos, &mut neg);
    pos.iter().zip(&neg).map(|(p, n)| p.norm_sqr() + n.norm_sqr()).sum()
}

fn port_fields(w: &ComplexMatrix, block: &[f64], cols: usize, pos: &mut [Complex64], neg: &mut [Complex64]) {
    let (w_pos, w_neg) = (w.row(0), w.row(1));
    for k in 0..w.cols() {
        let row = &block[k * cols..(k + 1) * cols];
        let (a, b) = (w_pos[k], w_neg[k]);
        for ((p, n), &x) in pos.iter_mut().zip(neg.iter_mut()).zip(row) {
            *p += a * x;
            *n += b * x;
        }
    }
}

/// Accumulated gradients for one OCU evaluated on one or more blocks.
#[derive(Debug, Clone)]
pub struct SystemGrad {
    pub system: ComplexMatrix,
    pub gain: f64,
}

impl SystemGrad {
    pub fn zeros(inputs: usize) -> Self {
        Self {
            system: ComplexMatrix::zeros(2, inputs),
            gain: 0.0,
        }
    }
}

/// Backward pass of [`accumulate_detect`]. Accumulates into `grad` and, if
/// given, into `grad_block` (gradient w.r.t. the encoded field amplitudes).
pub fn backprop_detect(
    w: &ComplexMatrix,
    gain: f64,
    block: &[f64],
    cols: usize,
    grad_out: &[f64],
    grad: &mut SystemGrad,
    grad_block: Option<&mut [f64]>,
) {
    let inputs = w.cols();
    let mut pos = vec![ZERO; cols];
    let mut neg = vec![ZERO; cols];
    port_fields(w, block, cols, &mut pos, &mut neg);

    // ∂L/∂R1 = 2κ g R1, ∂L/∂R2 = −2κ g R2
    let mut g_gain = 0.0;
    for i in 0..cols {
        let g = grad_out[i];
        g_gain += g * (pos[i].norm_sqr() - neg[i].norm_sqr());
        pos[i] *= 2.0 * gain * g;
        neg[i] *= -2.0 * gain * g;
    }
    grad.gain += g_gain;

    for k in 0..inputs {
        let row = &block[k * cols..(k + 1) * cols];
        let mut gp = ZERO;
        let mut gn = ZERO;
        for ((p, n), &x) in pos.iter().zip(&neg).zip(row) {
            gp += p * x;
            gn += n * x;
        }
        grad.system[(0, k)] += gp;
        grad.system[(1, k)] += gn;
    }

    if let Some(gb) = grad_block {
        let (w_pos, w_neg) = (w.row(0), w.row(1));
        for k in 0..inputs {
            let (a, b) = (w_pos[k], w_neg[k]);
            let out = &mut gb[k * cols..(k + 1) * cols];
            for ((o, p), n) in out.iter_mut().zip(&pos).zip(&neg) {
                // Re(conj(gR1)·W1k + conj(gR2)·W2k)
                *o += p.re * a.re + p.im * a.im + n.re * b.re + n.im * b.im;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::diffraction::phase_mask_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64, layers: usize, units: usize, inputs: usize) -> OcuModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cascade = Cascade::new(OcuGeometry::new(inputs, units, layers)).unwrap();
        let mut m = OcuModel::random(cascade, &mut rng);
        m.set_gain(0.7);
        m
    }

    fn random_patches(seed: u64, rows: usize, cols: usize) -> PatchMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchMatrix::from_columns(rows, cols, (0..rows * cols).map(|_| rng.gen()).collect()).unwrap()
    }

    /// Left-to-right chain product with explicit masks, as an oracle.
    fn naive_chain(model: &OcuModel, patches: &PatchMatrix) -> ComplexMatrix {
        let c = model.cascade();
        let m = c.num_layers();
        let mut acc = ComplexMatrix::from_real(patches.rows(), patches.cols(), patches.data()).unwrap();
        for l in 1..=m {
            acc = c.diffraction(l).matmul(&acc).unwrap();
            if l < m {
                acc = phase_mask_matrix(&model.phases()[l - 1]).unwrap().matmul(&acc).unwrap();
            }
        }
        acc
    }

    #[test]
    fn forward_matches_naive_chain() {
        let model = small_model(3, 3, 5, 4);
        let patches = random_patches(4, 4, 2);
        let fast = model.forward(&patches).unwrap();
        let slow = naive_chain(&model, &patches);
        let scale = slow.norm();
        assert!(fast.max_abs_diff(&slow) <= 1e-12 * scale);
    }

    #[test]
    fn zero_patches_give_zero_response() {
        let model = small_model(5, 3, 6, 4);
        let patches = PatchMatrix::from_columns(4, 3, vec![0.0; 12]).unwrap();
        let r = model.forward(&patches).unwrap();
        assert!(r.as_slice().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn forward_rejects_wrong_port_count() {
        let model = small_model(5, 3, 6, 4);
        let patches = PatchMatrix::from_columns(9, 1, vec![0.0; 9]).unwrap();
        assert!(matches!(model.forward(&patches), Err(OcuError::DimensionMismatch { .. })));
    }

    #[test]
    fn split_composition() {
        let model = small_model(7, 4, 6, 4);
        let whole = model.system_matrix();
        for split in 1..4 {
            let two_stage = model.segment(split, 4).unwrap().matmul(&model.segment(0, split).unwrap()).unwrap();
            assert!(whole.max_abs_diff(&two_stage) <= 1e-12 * whole.norm());
        }
    }

    #[test]
    fn balanced_detect_examples() {
        let r = ComplexMatrix::from_vec(2, 1, vec![Complex64::new(1.0, 1.0), ZERO]).unwrap();
        assert_eq!(balanced_detect(&r, 1.0).unwrap(), vec![2.0]);
        let r = ComplexMatrix::from_vec(
            2,
            2,
            vec![Complex64::new(1.0, 1.0), ZERO, ZERO, Complex64::new(2.0, 0.0)],
        )
        .unwrap();
        assert_eq!(balanced_detect(&r, 0.5).unwrap(), vec![1.0, -2.0]);
        let same = ComplexMatrix::from_vec(2, 1, vec![Complex64::new(0.3, -2.0); 2]).unwrap();
        assert_eq!(balanced_detect(&same, 3.0).unwrap(), vec![0.0]);
        assert!(balanced_detect(&ComplexMatrix::zeros(3, 1), 1.0).is_err());
    }

    #[test]
    fn hot_path_matches_reference_forward() {
        let model = small_model(11, 3, 8, 9);
        let patches = random_patches(12, 9, 7);
        let reference = model.detect(&patches).unwrap();
        let mut out = vec![0.0; 7];
        accumulate_detect(&model.system_matrix(), model.gain(), patches.data(), 7, &mut out);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn intensity_encoding() {
        let e = InputEncoding::Intensity;
        assert_eq!(e.encode(0.25), 0.5);
        assert_eq!(e.encode(-1.0), 0.0);
        assert_eq!(e.derivative(0.0), 0.0);
        assert_eq!(e.derivative(0.25), 1.0);
        assert_eq!(InputEncoding::Amplitude.encode(0.25), 0.25);
    }
}
