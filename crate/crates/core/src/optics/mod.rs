//! Analytical model of a diffractive optical convolution unit (OCU).
//!
//! An OCU is a chain of slab diffraction regions `F(l)` and metaline phase
//! masks `T(l)`, terminated by two point detectors whose intensities are
//! subtracted by a balanced photodetector.

mod complex;
mod diffraction;
mod geometry;
mod model;

pub use complex::ComplexMatrix;
pub use diffraction::{diffraction_matrix, huygens_coupling, phase_mask_matrix};
pub use geometry::{layout_positions, slot_length_from_phase, uniform_ports, Layout, OcuGeometry, Point, MICRON};
pub use model::{
    accumulate_detect, backprop_detect, balanced_detect, ocu_forward, total_port_power, Cascade, InputEncoding, OcuGrad, OcuModel,
    SystemGrad,
};
