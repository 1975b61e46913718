//! Analytical operation count, throughput and energy model.
//!
//! All quantities are SI: rates in baud/s (symbols per second), energies in
//! joules, powers in watts.

use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfSpec {
    /// Kernel size `H`.
    pub kernel_size: usize,
    /// Input channels `C` (OCUs per OCK).
    pub channels: usize,
    /// OCKs per layer `q`.
    pub ocks: usize,
    /// Modulator symbol rate `r` in baud/s.
    pub rate: f64,
    /// Symbols (pixels) per input `B`.
    pub symbols: f64,
    /// Bits per symbol `D`.
    pub bit_depth: f64,
    /// Modulation energy per bit `E_b` in joules.
    pub energy_per_bit: f64,
    /// Balanced detector power `P_d` in watts.
    pub detector_power: f64,
}

impl PerfSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.channels == 0 || self.ocks == 0 {
            return Err(OcuError::InvalidArgument(
                "kernel_size, channels and ocks must be at least 1".into(),
            ));
        }
        let positive = [
            ("rate", self.rate),
            ("bit_depth", self.bit_depth),
            ("energy_per_bit", self.energy_per_bit),
            ("detector_power", self.detector_power),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(OcuError::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.symbols >= 0.0) || !self.symbols.is_finite() {
            return Err(OcuError::InvalidArgument(format!(
                "symbols must be nonnegative and finite, got {}",
                self.symbols
            )));
        }
        Ok(())
    }
}

/// `(O_conv, O_kernel)`: multiplications plus additions of one `H × H`
/// window, for one and for `C` channels.
pub fn ops_count(kernel_size: usize, channels: usize) -> Result<(u64, u64)> {
    if kernel_size == 0 || channels == 0 {
        return Err(OcuError::InvalidArgument("kernel size and channels must be at least 1".into()));
    }
    let h2 = (kernel_size * kernel_size) as u64;
    let conv = 2 * h2 - 1;
    Ok((conv, channels as u64 * conv))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub ocu: f64,
    pub ock: f64,
    pub ocl: f64,
}

/// Operations per second of one OCU, one OCK and one OCL.
pub fn throughput(spec: &PerfSpec) -> Result<Throughput> {
    spec.validate()?;
    let (conv, _) = ops_count(spec.kernel_size, spec.channels)?;
    let ocu = conv as f64 * spec.rate;
    let ock = spec.channels as f64 * ocu;
    let ocl = spec.ocks as f64 * ock;
    Ok(Throughput { ocu, ock, ocl })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub modulation: f64,
    pub detection: f64,
    pub total: f64,
}

/// Energy of one OCU-equivalent kernel pass over `B` symbols.
pub fn energy(spec: &PerfSpec) -> Result<Energy> {
    spec.validate()?;
    let h2 = (spec.kernel_size * spec.kernel_size) as f64;
    let modulation = h2 * spec.symbols * spec.bit_depth * spec.channels as f64 * spec.energy_per_bit;
    let detection = spec.detector_power * (spec.symbols / spec.rate);
    Ok(Energy {
        modulation,
        detection,
        total: modulation + detection,
    })
}

/// One labelled quantity of the performance table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfRow {
    pub quantity: &'static str,
    pub value: f64,
    pub unit: &'static str,
}

pub fn perf_table(spec: &PerfSpec) -> Result<Vec<PerfRow>> {
    let (conv, kernel) = ops_count(spec.kernel_size, spec.channels)?;
    let t = throughput(spec)?;
    let e = energy(spec)?;
    let row = |quantity, value, unit| PerfRow { quantity, value, unit };
    Ok(vec![
        row("O_conv", conv as f64, "ops"),
        row("O_kernel", kernel as f64, "ops"),
        row("S_ocu", t.ocu, "OPS"),
        row("S_ock", t.ock, "OPS"),
        row("S_ocl", t.ocl, "OPS"),
        row("E_mod", e.modulation, "J"),
        row("E_det", e.detection, "J"),
        row("E_ocu", e.total, "J"),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference() -> PerfSpec {
        PerfSpec {
            kernel_size: 3,
            channels: 3,
            ocks: 16,
            rate: 1e11,
            symbols: 8e6,
            bit_depth: 8.0,
            energy_per_bit: 1e-13,
            detector_power: 0.1,
        }
    }

    #[test]
    fn operation_counts() {
        assert_eq!(ops_count(3, 1).unwrap(), (17, 17));
        assert_eq!(ops_count(1, 1).unwrap(), (1, 1));
        assert_eq!(ops_count(3, 3).unwrap().1, 51);
        assert!(ops_count(0, 1).is_err());
    }

    #[test]
    fn reference_throughput_and_energy() {
        let t = throughput(&reference()).unwrap();
        assert_eq!(t.ocu, 1.7e12);
        assert_eq!(t.ocl, 8.16e13);
        let e = energy(&reference()).unwrap();
        assert_eq!(e.total, 1.808e-4);
    }

    #[test]
    fn unit_rate_and_degenerate_inputs() {
        let spec = PerfSpec {
            rate: 1.0,
            ..reference()
        };
        assert_eq!(throughput(&spec).unwrap().ocu, 17.0);
        assert!(throughput(&PerfSpec { rate: 0.0, ..reference() }).is_err());
        let none = energy(&PerfSpec { symbols: 0.0, ..reference() }).unwrap();
        assert_eq!(none.total, 0.0);
    }

    #[test]
    fn table_has_every_quantity() {
        let rows = perf_table(&reference()).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[4].value, 8.16e13);
    }
}
