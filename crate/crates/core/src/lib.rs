//! Simulation and training of diffractive optical convolution units.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod ocnn;
pub mod optics;
pub mod optim;
pub mod perf;
pub mod srp;
pub mod tensorize;

pub use error::{OcuError, Result};
