//! Dense arrays, hand-derived layer gradients, the real DFT and the optimizer
//! the models are built from. Everything is `f64` so gradients can be checked
//! against central differences.

mod activation;
mod adam;
mod array;
mod batchnorm;
mod conv;
mod dft;
mod gradcheck;
mod linear;
mod mlp;
mod param;
mod phase;
pub mod stats;

pub use activation::{elu, elu_grad, relu, relu_grad, softplus, softplus_grad, Activation};
pub use adam::{Adam, AdamConfig};
pub use array::DenseArray;
pub use batchnorm::{BatchNorm1d, BnCache, BnMode, BN_EPS, BN_MOMENTUM};
pub use conv::{conv1d, conv1d_backward, Conv1d, Conv1dGrads};
pub use dft::{rfft, ComplexSpectrum, RealDft};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use linear::{linear, linear_backward, Linear, LinearGrads};
pub use mlp::{Mlp, MlpCache};
pub use param::{Param, Parameterized};
pub use phase::{atan2_phase, atan2_phase_grad, wrap_cycles};
