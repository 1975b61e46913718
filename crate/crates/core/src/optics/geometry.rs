use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};

pub const MICRON: f64 = 1e-6;

/// A point in the slab plane. `x` runs along the propagation axis, `y` is
/// transverse. Both in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Physical layout of one optical convolution unit.
///
/// `num_layers` counts diffraction regions: there are `num_layers - 1`
/// metalines between the input ports and the two output ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcuGeometry {
    pub wavelength: f64,
    pub slab_index: f64,
    pub slot_index: f64,
    pub layer_gap: f64,
    pub aperture: f64,
    pub metaunit_period: f64,
    pub slot_width: f64,
    pub slot_gap: f64,
    /// Recorded for completeness; the 2D model does not use it.
    pub slot_height: f64,
    pub num_layers: usize,
    pub metaunits_per_layer: usize,
    pub num_inputs: usize,
    pub input_positions: Vec<f64>,
    pub output_positions: [f64; 2],
    pub amplitude_coeff: f64,
    pub phase_coeff: f64,
}

impl OcuGeometry {
    /// Silicon-on-insulator defaults at 1550 nm with a 300 µm aperture and
    /// 75 µm between planes. Inputs are spread with pitch `L2/(H²+1)`,
    /// detectors sit at `±L2/4`.
    pub fn new(num_inputs: usize, metaunits_per_layer: usize, num_layers: usize) -> Self {
        let aperture = 300.0 * MICRON;
        Self {
            wavelength: 1.55 * MICRON,
            slab_index: 2.85,
            slot_index: 1.44,
            layer_gap: 75.0 * MICRON,
            aperture,
            metaunit_period: 1.5 * MICRON,
            slot_width: 0.2 * MICRON,
            slot_gap: 0.5 * MICRON,
            slot_height: 0.22 * MICRON,
            num_layers,
            metaunits_per_layer,
            num_inputs,
            input_positions: uniform_ports(num_inputs, aperture),
            output_positions: [aperture / 4.0, -aperture / 4.0],
            amplitude_coeff: 1.0,
            phase_coeff: 0.0,
        }
    }

    /// Geometry for an `H × H` kernel with the usual 50 metaunits per line.
    pub fn for_kernel(kernel_size: usize, num_layers: usize) -> Self {
        Self::new(kernel_size * kernel_size, 50, num_layers)
    }

    pub fn num_metalines(&self) -> usize {
        self.num_layers.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OcuError::InvalidGeometry(msg));
        let scalars = [
            ("wavelength", self.wavelength),
            ("slab_index", self.slab_index),
            ("slot_index", self.slot_index),
            ("layer_gap", self.layer_gap),
            ("aperture", self.aperture),
            ("metaunit_period", self.metaunit_period),
            ("amplitude_coeff", self.amplitude_coeff),
            ("phase_coeff", self.phase_coeff),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        if self.wavelength <= 0.0 {
            return bad("wavelength must be positive".into());
        }
        if !(self.slab_index > self.slot_index && self.slot_index > 0.0) {
            return bad(format!(
                "indices must satisfy n1 > n2 > 0 (n1 = {}, n2 = {})",
                self.slab_index, self.slot_index
            ));
        }
        if self.layer_gap <= 0.0 {
            return bad("layer_gap must be positive".into());
        }
        if self.num_layers < 2 {
            return bad(format!("num_layers must be at least 2, got {}", self.num_layers));
        }
        if self.metaunits_per_layer == 0 || self.num_inputs == 0 {
            return bad("metaunit and input counts must be positive".into());
        }
        let span = self.metaunits_per_layer as f64 * self.metaunit_period;
        if span > self.aperture * (1.0 + 1e-12) {
            return bad(format!(
                "{} metaunits at period {} m span {} m, wider than the {} m aperture",
                self.metaunits_per_layer, self.metaunit_period, span, self.aperture
            ));
        }
        if self.input_positions.len() != self.num_inputs {
            return bad(format!(
                "{} input positions for {} inputs",
                self.input_positions.len(),
                self.num_inputs
            ));
        }
        let half = self.aperture / 2.0 * (1.0 + 1e-12);
        for &y in self.input_positions.iter().chain(self.output_positions.iter()) {
            if !y.is_finite() || y.abs() > half {
                return bad(format!("port at y = {y} m lies outside the aperture"));
            }
        }
        Ok(())
    }
}

/// `n` ports with pitch `aperture/(n+1)`, centered on the axis.
pub fn uniform_ports(n: usize, aperture: f64) -> Vec<f64> {
    let pitch = aperture / (n as f64 + 1.0);
    let center = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| (i as f64 - center) * pitch).collect()
}

/// Absolute coordinates of every port and metaunit of an OCU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub inputs: Vec<Point>,
    /// One entry per metaline, `l = 1..M-1`, at `x = l·L1`.
    pub metalines: Vec<Vec<Point>>,
    pub outputs: Vec<Point>,
}

impl Layout {
    /// Planes in propagation order: inputs, each metaline, outputs.
    pub fn planes(&self) -> Vec<&[Point]> {
        let mut planes: Vec<&[Point]> = Vec::with_capacity(self.metalines.len() + 2);
        planes.push(&self.inputs);
        for line in &self.metalines {
            planes.push(line);
        }
        planes.push(&self.outputs);
        planes
    }
}

pub fn layout_positions(geom: &OcuGeometry) -> Result<Layout> {
    geom.validate()?;
    let v = geom.metaunits_per_layer;
    let center = (v as f64 - 1.0) / 2.0;
    let metalines = (1..geom.num_layers)
        .map(|l| {
            let x = l as f64 * geom.layer_gap;
            (0..v)
                .map(|i| Point::new(x, (i as f64 - center) * geom.metaunit_period))
                .collect()
        })
        .collect();
    let x_out = geom.num_layers as f64 * geom.layer_gap;
    Ok(Layout {
        inputs: geom.input_positions.iter().map(|&y| Point::new(0.0, y)).collect(),
        metalines,
        outputs: geom.output_positions.iter().map(|&y| Point::new(x_out, y)).collect(),
    })
}

/// Slot length that realizes a phase delay, with the phase wrapped into
/// `[0, 2π)` first.
pub fn slot_length_from_phase(phase: f64, geom: &OcuGeometry) -> Result<f64> {
    if !phase.is_finite() {
        return Err(OcuError::NonFinite("phase"));
    }
    let dn = geom.slab_index - geom.slot_index;
    if dn == 0.0 || !dn.is_finite() {
        return Err(OcuError::InvalidGeometry(
            "slab and slot indices are equal; phase cannot be synthesized".into(),
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    // 2π itself maps to a full-length slot; everything else wraps.
    let wrapped = if phase == two_pi { two_pi } else { phase.rem_euclid(two_pi) };
    Ok(geom.wavelength * wrapped / (two_pi * dn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn slot_length_examples() {
        let g = OcuGeometry::new(9, 50, 3);
        assert_eq!(slot_length_from_phase(0.0, &g).unwrap(), 0.0);
        let full = slot_length_from_phase(2.0 * PI, &g).unwrap();
        // λ/(n1 - n2) = 1.55 / 1.41 µm
        assert!((full - 1.55e-6 / 1.41).abs() < 1e-18);
        assert!((full - 1.0993e-6).abs() < 1e-10);
        let half = slot_length_from_phase(PI, &g).unwrap();
        assert!((half - full / 2.0).abs() < 1e-20);
        // Negative phases wrap.
        let wrapped = slot_length_from_phase(-PI / 2.0, &g).unwrap();
        assert!((wrapped - 0.75 * full).abs() < 1e-18);
    }

    #[test]
    fn slot_length_errors() {
        let mut g = OcuGeometry::new(9, 50, 3);
        assert!(matches!(slot_length_from_phase(f64::NAN, &g), Err(OcuError::NonFinite(_))));
        g.slot_index = g.slab_index;
        assert!(matches!(
            slot_length_from_phase(1.0, &g),
            Err(OcuError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn ten_unit_metaline_spans_fifteen_microns() {
        let mut g = OcuGeometry::new(9, 10, 4);
        g.aperture = 15.0 * MICRON;
        g.layer_gap = 40.0 * MICRON;
        g.input_positions = uniform_ports(9, g.aperture);
        g.output_positions = [g.aperture / 4.0, -g.aperture / 4.0];
        let layout = layout_positions(&g).unwrap();
        let ys: Vec<f64> = layout.metalines[0].iter().map(|p| p.y).collect();
        let span = (ys[9] - ys[0]) + g.metaunit_period;
        assert!((span - 15.0 * MICRON).abs() < 1e-15);
        assert!((ys[0] + ys[9]).abs() < 1e-18);
        assert_eq!(layout.metalines.len(), 3);
        assert!((layout.metalines[2][0].x - 120.0 * MICRON).abs() < 1e-18);
        assert!((layout.outputs[0].x - 160.0 * MICRON).abs() < 1e-18);
    }

    #[test]
    fn single_metaunit_sits_on_axis() {
        let g = OcuGeometry::new(1, 1, 2);
        let layout = layout_positions(&g).unwrap();
        assert_eq!(layout.metalines[0][0].y, 0.0);
        assert_eq!(layout.inputs[0].y, 0.0);
    }

    #[test]
    fn fifty_units_span_seventy_five_microns() {
        let g = OcuGeometry::new(9, 50, 3);
        let layout = layout_positions(&g).unwrap();
        let line = &layout.metalines[0];
        let span = line[49].y - line[0].y + g.metaunit_period;
        assert!((span - 75.0 * MICRON).abs() < 1e-15);
    }

    #[test]
    fn overflowing_metaline_is_rejected() {
        let mut g = OcuGeometry::new(9, 50, 3);
        g.aperture = 60.0 * MICRON;
        g.input_positions = uniform_ports(9, g.aperture);
        g.output_positions = [15.0 * MICRON, -15.0 * MICRON];
        assert!(matches!(layout_positions(&g), Err(OcuError::InvalidGeometry(_))));
    }

    #[test]
    fn ports_outside_aperture_are_rejected() {
        let mut g = OcuGeometry::new(9, 50, 3);
        g.output_positions = [200.0 * MICRON, -75.0 * MICRON];
        assert!(g.validate().is_err());
    }
}
