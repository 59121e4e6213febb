//! The latent dynamics model, its loss, and the comparison baselines.

mod baselines;
mod config;
mod model;
mod spectral;
mod state;

pub use baselines::{
    kl_standard_normal, FfConfig, FfModel, VaeConfig, VaeLoss, VaeModel, VaeOutput,
};
pub use config::{default_kernel, time_grid, FldConfig};
pub use model::{combine_losses, ConvBlock, Encoding, FldModel, LossOutput, RunningUpdate};
pub use spectral::{
    channel_parameters, channel_parameters_backward, parameterize, reconstruct_channel,
    reconstruct_channel_backward, reconstruct_latent, ChannelCache, LatentParameterization,
    LatentState, MIN_POWER,
};
pub use state::StateDict;

use serde::{Deserialize, Serialize};

use crate::error::{FldError, Result};

/// Motion representations compared by their parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationKind {
    Original,
    Vae,
    Pae,
    Fld,
}

/// Number of values needed to represent one trajectory of `traj_len` frames.
pub fn representation_param_count(
    kind: RepresentationKind,
    d: usize,
    c: usize,
    h: usize,
    traj_len: usize,
) -> Result<usize> {
    if traj_len < h {
        return Err(FldError::TooShort {
            len: traj_len,
            needed: h,
        });
    }
    let windows = traj_len - h + 1;
    Ok(match kind {
        RepresentationKind::Original => d * traj_len,
        RepresentationKind::Vae => c * windows,
        RepresentationKind::Pae => 4 * c * windows,
        RepresentationKind::Fld => 4 * c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        use RepresentationKind::*;
        assert_eq!(representation_param_count(Fld, 27, 8, 51, 500).unwrap(), 32);
        assert_eq!(
            representation_param_count(Original, 27, 8, 51, 100).unwrap(),
            2700
        );
        assert_eq!(representation_param_count(Pae, 27, 8, 51, 51).unwrap(), 32);
        assert_eq!(representation_param_count(Vae, 27, 8, 51, 60).unwrap(), 80);
        assert!(representation_param_count(Fld, 27, 8, 51, 50).is_err());
    }
}
