//! Periodic latent representations of motion and their use in learning
//! curricula.

pub mod curriculum;
pub mod dynamics;
pub mod error;
pub mod fld;
pub mod numerics;
pub mod par;
pub mod signal;
pub mod training;

pub use error::{FldError, Result};
