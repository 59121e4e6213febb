use std::f64::consts::TAU;

use crate::error::{FldError, Result};

/// Angle of the vector `(sx, sy)` in cycles, wrapped to `[-0.5, 0.5)`.
pub fn atan2_phase(sy: f64, sx: f64) -> Result<f64> {
    if sy == 0.0 && sx == 0.0 {
        return Err(FldError::UndefinedPhase);
    }
    Ok(wrap_cycles(sy.atan2(sx) / TAU))
}

/// `(∂φ/∂sy, ∂φ/∂sx)` for [`atan2_phase`].
pub fn atan2_phase_grad(sy: f64, sx: f64) -> (f64, f64) {
    let r2 = sx * sx + sy * sy;
    if r2 == 0.0 {
        return (0.0, 0.0);
    }
    (sx / (TAU * r2), -sy / (TAU * r2))
}

/// Wraps a phase in cycles into `[-0.5, 0.5)`.
pub fn wrap_cycles(phi: f64) -> f64 {
    let w = phi - phi.round();
    if w >= 0.5 {
        w - 1.0
    } else if w < -0.5 {
        w + 1.0
    } else {
        w
    }
}
