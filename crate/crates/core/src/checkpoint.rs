//! Versioned JSON checkpoints for fitted kernels and trained networks.
//!
//! Files carry no timestamps, so saving the same state twice produces
//! identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OcuError, Result};
use crate::ocnn::{LayerState, Network, NetworkSpec};
use crate::optics::{Cascade, InputEncoding, OcuGeometry, OcuModel};
use crate::srp::Kernel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedUnit {
    pub name: String,
    pub kernel: Kernel,
    pub phases: Vec<Vec<f64>>,
    pub gain: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Body {
    Kernels {
        geometry: OcuGeometry,
        encoding: InputEncoding,
        stride: usize,
        units: Vec<FittedUnit>,
    },
    Network {
        spec: NetworkSpec,
        state: Vec<LayerState>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub provenance: Provenance,
    pub body: Body,
}

impl Checkpoint {
    pub fn kernels(
        provenance: Provenance,
        geometry: OcuGeometry,
        encoding: InputEncoding,
        stride: usize,
        units: Vec<FittedUnit>,
    ) -> Self {
        Self {
            version: FORMAT_VERSION,
            provenance,
            body: Body::Kernels {
                geometry,
                encoding,
                stride,
                units,
            },
        }
    }

    pub fn network(provenance: Provenance, net: &Network) -> Self {
        Self {
            version: FORMAT_VERSION,
            provenance,
            body: Body::Network {
                spec: net.spec().clone(),
                state: net.state(),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| OcuError::InvalidArgument(format!("checkpoint serialization: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| OcuError::format(origin, e.to_string()))?;
        if ck.version != FORMAT_VERSION {
            return Err(OcuError::format(
                origin,
                format!("unsupported checkpoint version {} (expected {FORMAT_VERSION})", ck.version),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| OcuError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| OcuError::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Rebuilds the fitted OCUs, sharing one cascade.
    pub fn kernel_models(&self) -> Result<Vec<(FittedUnit, OcuModel)>> {
        let Body::Kernels { geometry, units, .. } = &self.body else {
            return Err(OcuError::InvalidArgument("checkpoint holds a network, not fitted kernels".into()));
        };
        let cascade = Cascade::new(geometry.clone())?;
        units
            .iter()
            .map(|u| {
                Kernel::new(u.kernel.size(), u.kernel.values().to_vec())?;
                let model = OcuModel::from_parts(cascade.clone(), u.phases.clone(), u.gain)?;
                Ok((u.clone(), model))
            })
            .collect()
    }

    pub fn build_network(&self) -> Result<Network> {
        let Body::Network { spec, state } = &self.body else {
            return Err(OcuError::InvalidArgument("checkpoint holds fitted kernels, not a network".into()));
        };
        Network::from_state(spec.clone(), state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn provenance() -> Provenance {
        Provenance {
            command: "test".into(),
            seed: 3,
            epochs: 1,
            final_loss: 0.125,
        }
    }

    #[test]
    fn kernel_checkpoint_round_trips_bytes() {
        let g = OcuGeometry::new(4, 8, 3);
        let model = OcuModel::random(Cascade::new(g.clone()).unwrap(), &mut ChaCha8Rng::seed_from_u64(1));
        let unit = FittedUnit {
            name: "k".into(),
            kernel: Kernel::new(2, vec![0.1, -0.2, 0.3, 1.0 / 3.0]).unwrap(),
            phases: model.phases().to_vec(),
            gain: 0.7,
            mse: 1e-3,
        };
        let ck = Checkpoint::kernels(provenance(), g, InputEncoding::Intensity, 1, vec![unit]);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), text);
        let models = back.kernel_models().unwrap();
        assert_eq!(models[0].1.phases(), model.phases());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let g = OcuGeometry::new(4, 8, 3);
        let mut ck = Checkpoint::kernels(provenance(), g, InputEncoding::Intensity, 1, vec![]);
        ck.version = 99;
        let text = ck.to_json().unwrap();
        assert!(matches!(Checkpoint::from_json(&text, Path::new("x")), Err(OcuError::Format { .. })));
    }
}
