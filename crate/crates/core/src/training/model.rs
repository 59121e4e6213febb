use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, FldError, Result};
use crate::fld::{FfConfig, FfModel, FldConfig, FldModel, StateDict, VaeConfig, VaeModel};
use crate::numerics::{DenseArray, Param, Parameterized};
use crate::signal::NormalizationStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fld,
    /// The same network trained without propagation (`N = 0`).
    Pae,
    Vae,
    Ff,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Fld,
        ModelKind::Pae,
        ModelKind::Vae,
        ModelKind::Ff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fld => "fld",
            ModelKind::Pae => "pae",
            ModelKind::Vae => "vae",
            ModelKind::Ff => "ff",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = FldError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fld" => Ok(ModelKind::Fld),
            "pae" => Ok(ModelKind::Pae),
            "vae" => Ok(ModelKind::Vae),
            "ff" => Ok(ModelKind::Ff),
            other => invalid(format!(
                "unknown model kind `{other}` (expected fld, pae, vae or ff)"
            )),
        }
    }
}

/// Architecture of one model kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Fld(FldConfig),
    Pae(FldConfig),
    Vae(VaeConfig),
    Ff(FfConfig),
}

impl ModelConfig {
    /// Architecture for `kind` derived from the shared latent settings. The
    /// autoencoder drops propagation; the baselines take `d`, `H` and `c`.
    pub fn for_kind(kind: ModelKind, fld: &FldConfig) -> Self {
        match kind {
            ModelKind::Fld => ModelConfig::Fld(fld.clone()),
            ModelKind::Pae => ModelConfig::Pae(FldConfig {
                n: 0,
                ..fld.clone()
            }),
            ModelKind::Vae => ModelConfig::Vae(VaeConfig::new(fld.d, fld.h, fld.c)),
            ModelKind::Ff => ModelConfig::Ff(FfConfig::new(fld.d, fld.h)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Fld(_) => ModelKind::Fld,
            ModelConfig::Pae(_) => ModelKind::Pae,
            ModelConfig::Vae(_) => ModelKind::Vae,
            ModelConfig::Ff(_) => ModelKind::Ff,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ModelConfig::Fld(c) | ModelConfig::Pae(c) => (c.d, c.h),
            ModelConfig::Vae(c) => (c.d, c.h),
            ModelConfig::Ff(c) => (c.d, c.h),
        }
    }

    /// Frames past the window start a training item needs.
    pub fn lookahead(&self) -> usize {
        match self {
            ModelConfig::Fld(c) | ModelConfig::Pae(c) => c.h + c.n,
            ModelConfig::Vae(c) => c.h,
            ModelConfig::Ff(c) => c.h + 1,
        }
    }

    pub fn build(&self, norm: NormalizationStats, rng: &mut impl Rng) -> Result<TrainedModel> {
        let (d, h) = self.dims();
        if d == 0 || h == 0 {
            return invalid("model dimensions must be positive");
        }
        if norm.dim() != d {
            return shape_err(format!(
                "normalization has {} dims, model expects {d}",
                norm.dim()
            ));
        }
        Ok(match self {
            ModelConfig::Fld(c) => TrainedModel::Fld(FldModel::new(c.clone(), norm, rng)?),
            ModelConfig::Pae(c) => {
                if c.n != 0 {
                    return invalid("autoencoder configs must have N = 0");
                }
                TrainedModel::Pae(FldModel::new(c.clone(), norm, rng)?)
            }
            ModelConfig::Vae(c) => TrainedModel::Vae(VaeModel::new(c.clone(), norm, rng)?),
            ModelConfig::Ff(c) => TrainedModel::Ff(FfModel::new(c.clone(), norm, rng)),
        })
    }
}

/// A model of any kind together with its normalization statistics.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Fld(FldModel),
    Pae(FldModel),
    Vae(VaeModel),
    Ff(FfModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Fld(_) => ModelKind::Fld,
            TrainedModel::Pae(_) => ModelKind::Pae,
            TrainedModel::Vae(_) => ModelKind::Vae,
            TrainedModel::Ff(_) => ModelKind::Ff,
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            TrainedModel::Fld(m) => ModelConfig::Fld(m.config.clone()),
            TrainedModel::Pae(m) => ModelConfig::Pae(m.config.clone()),
            TrainedModel::Vae(m) => ModelConfig::Vae(m.config.clone()),
            TrainedModel::Ff(m) => ModelConfig::Ff(m.config.clone()),
        }
    }

    pub fn norm(&self) -> &NormalizationStats {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => &m.norm,
            TrainedModel::Vae(m) => &m.norm,
            TrainedModel::Ff(m) => &m.norm,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.config().dims()
    }

    /// The latent dynamics network, for kinds that have one.
    pub fn as_fld(&self) -> Option<&FldModel> {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_fld(self) -> Result<FldModel> {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => Ok(m),
            other => invalid(format!("a {} model has no latent dynamics", other.kind())),
        }
    }

    /// Predictions for horizons `0..=n` of one normalized `d × H` segment.
    /// The VAE has no dynamics and repeats its reconstruction; the
    /// feed-forward model returns the input at horizon 0.
    pub fn predict_horizons(&self, segment: &DenseArray, n: usize) -> Result<Vec<DenseArray>> {
        let (d, h) = self.dims();
        if segment.shape() != [d, h] {
            return shape_err(format!(
                "expected a {d}×{h} segment, got {:?}",
                segment.shape()
            ));
        }
        let split = |all: DenseArray| -> Result<Vec<DenseArray>> {
            let per = d * h;
            (0..=n)
                .map(|i| DenseArray::new(vec![d, h], all.data()[i * per..(i + 1) * per].to_vec()))
                .collect()
        };
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => split(m.predict_horizons(segment, n)?),
            TrainedModel::Vae(m) => {
                let flat = segment.clone().reshape(&[1, d * h])?;
                let r = m.forward(&flat, None)?.recon.reshape(&[d, h])?;
                Ok(vec![r; n + 1])
            }
            TrainedModel::Ff(m) => {
                let flat = segment.clone().reshape(&[1, d * h])?;
                let mut out = vec![segment.clone()];
                for s in m.rollout(&flat, n)? {
                    out.push(s.reshape(&[d, h])?);
                }
                Ok(out)
            }
        }
    }

    pub fn state_arrays(&self) -> Vec<(String, DenseArray)> {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => m.state_arrays(),
            TrainedModel::Vae(m) => m.state_arrays(),
            TrainedModel::Ff(m) => m.state_arrays(),
        }
    }

    pub fn load_state(&mut self, arrays: Vec<(String, DenseArray)>) -> Result<()> {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => m.load_state(arrays),
            TrainedModel::Vae(m) => m.load_state(arrays),
            TrainedModel::Ff(m) => m.load_state(arrays),
        }
    }
}

impl Parameterized for TrainedModel {
    fn params(&self) -> Vec<&Param> {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => m.params(),
            TrainedModel::Vae(m) => m.params(),
            TrainedModel::Ff(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            TrainedModel::Fld(m) | TrainedModel::Pae(m) => m.params_mut(),
            TrainedModel::Vae(m) => m.params_mut(),
            TrainedModel::Ff(m) => m.params_mut(),
        }
    }
}
