use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signal::{DEFAULT_DT, DEFAULT_STATE_DIM};

/// Kernel size used when none is given: the window length, or one less
/// when the window is even (kernels must be odd for "same" padding).
pub fn default_kernel(h: usize) -> usize {
    if h % 2 == 1 {
        h
    } else {
        h.saturating_sub(1).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FldConfig {
    /// State dimensions.
    pub d: usize,
    /// Latent channels.
    pub c: usize,
    /// Window length.
    pub h: usize,
    /// Propagation horizon.
    pub n: usize,
    pub alpha: f64,
    pub dt: f64,
    /// Width of the hidden convolution layers.
    pub hidden: usize,
    pub kernel: usize,
    /// Apply BN + ELU after the last decoder layer.
    pub final_activation: bool,
}

impl Default for FldConfig {
    fn default() -> Self {
        Self {
            d: DEFAULT_STATE_DIM,
            c: 8,
            h: 51,
            n: 50,
            alpha: 1.0,
            dt: DEFAULT_DT,
            hidden: 64,
            kernel: 51,
            final_activation: false,
        }
    }
}

impl FldConfig {
    pub fn new(d: usize, c: usize, h: usize, n: usize) -> Self {
        Self {
            d,
            c,
            h,
            n,
            kernel: default_kernel(h),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.c == 0 || self.hidden == 0 {
            return invalid("d, c and hidden must be positive");
        }
        if self.h < 2 {
            return invalid(format!("window length must be at least 2, got {}", self.h));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if self.kernel % 2 == 0 {
            return invalid(format!("kernel size must be odd, got {}", self.kernel));
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        1.0 / (2.0 * self.dt)
    }

    /// Frames the window trails behind the newest one: `(−(H−1)·dt, …, 0)`.
    pub fn time_grid(&self) -> Vec<f64> {
        time_grid(self.h, self.dt)
    }
}

/// Trailing time grid `T_k = (k − (H−1))·dt`.
pub fn time_grid(h: usize, dt: f64) -> Vec<f64> {
    (0..h).map(|k| (k as f64 - (h as f64 - 1.0)) * dt).collect()
}
