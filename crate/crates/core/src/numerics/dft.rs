//! Real-input discrete Fourier transform with its adjoint.
//!
//! Window lengths here are tens of samples, so the transform is a direct
//! `O(H²)` evaluation against a precomputed twiddle table. Angles are reduced
//! modulo `H` before evaluation, which keeps every table entry exact to one
//! rounding.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Non-negative frequency bins `0..=floor(H/2)` of a real signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpectrum {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

impl ComplexSpectrum {
    pub fn bins(&self) -> usize {
        self.real.len()
    }

    pub fn magnitude(&self, j: usize) -> f64 {
        self.real[j].hypot(self.imag[j])
    }

    pub fn power(&self, j: usize) -> f64 {
        self.real[j] * self.real[j] + self.imag[j] * self.imag[j]
    }
}

/// Precomputed transform for a fixed length.
#[derive(Clone, Debug)]
pub struct RealDft {
    len: usize,
    bins: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RealDft {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return invalid(format!("rfft needs at least 2 samples, got {len}"));
        }
        let bins = len / 2 + 1;
        let mut cos = Vec::with_capacity(bins * len);
        let mut sin = Vec::with_capacity(bins * len);
        for j in 0..bins {
            for t in 0..len {
                let ang = TAU * ((j * t) % len) as f64 / len as f64;
                cos.push(ang.cos());
                sin.push(ang.sin());
            }
        }
        Ok(Self {
            len,
            bins,
            cos,
            sin,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `c_j = Σ_t x_t·exp(−i2πjt/H)` for `j = 0..=H/2`.
    pub fn forward(&self, x: &[f64]) -> Result<ComplexSpectrum> {
        if x.len() != self.len {
            return shape_err(format!(
                "rfft planned for {} samples, got {}",
                self.len,
                x.len()
            ));
        }
        let mut real = vec![0.0; self.bins];
        let mut imag = vec![0.0; self.bins];
        for j in 0..self.bins {
            let c = &self.cos[j * self.len..(j + 1) * self.len];
            let s = &self.sin[j * self.len..(j + 1) * self.len];
            let mut re = 0.0;
            let mut im = 0.0;
            for ((xv, cv), sv) in x.iter().zip(c).zip(s) {
                re += xv * cv;
                im -= xv * sv;
            }
            real[j] = re;
            imag[j] = im;
        }
        Ok(ComplexSpectrum { real, imag })
    }

    /// Adjoint of [`forward`](Self::forward) viewed as a real linear map
    /// `R^H → R^{2(K+1)}`: maps gradients on `(Re c, Im c)` back to the signal.
    pub fn adjoint(&self, grad_real: &[f64], grad_imag: &[f64]) -> Result<Vec<f64>> {
        if grad_real.len() != self.bins || grad_imag.len() != self.bins {
            return shape_err(format!("rfft adjoint expects {} bins", self.bins));
        }
        let mut out = vec![0.0; self.len];
        for j in 0..self.bins {
            let gr = grad_real[j];
            let gi = grad_imag[j];
            if gr == 0.0 && gi == 0.0 {
                continue;
            }
            let c = &self.cos[j * self.len..(j + 1) * self.len];
            let s = &self.sin[j * self.len..(j + 1) * self.len];
            for ((o, cv), sv) in out.iter_mut().zip(c).zip(s) {
                *o += gr * cv - gi * sv;
            }
        }
        Ok(out)
    }
}

/// One-shot convenience wrapper around [`RealDft`].
pub fn rfft(x: &[f64]) -> Result<ComplexSpectrum> {
    RealDft::new(x.len())?.forward(x)
}
