//! Frequency-domain parameterization of latent curves and the sinusoidal
//! reconstruction, each with its backward pass.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{wrap_cycles, ComplexSpectrum, DenseArray, RealDft};

/// Total non-DC power below which a curve counts as constant.
pub const MIN_POWER: f64 = 1e-12;

/// Per-channel frequency (Hz), amplitude and offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentParameterization {
    pub f: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LatentParameterization {
    pub fn zeros(c: usize) -> Self {
        Self {
            f: vec![0.0; c],
            a: vec![0.0; c],
            b: vec![0.0; c],
        }
    }

    pub fn channels(&self) -> usize {
        self.f.len()
    }

    /// `[f…, a…, b…]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.f.clone();
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() % 3 != 0 || v.is_empty() {
            return shape_err(format!(
                "θ vector length {} is not a positive multiple of 3",
                v.len()
            ));
        }
        let c = v.len() / 3;
        Ok(Self {
            f: v[..c].to_vec(),
            a: v[c..2 * c].to_vec(),
            b: v[2 * c..].to_vec(),
        })
    }

    /// Componentwise `(1 − λ)·self + λ·other`.
    pub fn lerp(&self, other: &Self, lambda: f64) -> Self {
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter()
                .zip(y)
                .map(|(p, q)| (1.0 - lambda) * p + lambda * q)
                .collect()
        };
        Self {
            f: mix(&self.f, &other.f),
            a: mix(&self.a, &other.a),
            b: mix(&self.b, &other.b),
        }
    }
}

/// Per-channel phase in cycles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub phi: Vec<f64>,
}

impl LatentState {
    pub fn wrapped(phi: Vec<f64>) -> Self {
        Self {
            phi: phi.into_iter().map(wrap_cycles).collect(),
        }
    }
}

/// Quantities kept from [`channel_parameters`] for its backward pass.
#[derive(Clone, Debug)]
pub struct ChannelCache {
    spectrum: ComplexSpectrum,
    power: f64,
    f: f64,
}

/// `(f, a, b)` of one latent curve of length `H`:
/// `f = Σ ν_j·p_j / Σ p_j` with `ν_j = j/(H·dt)` and `p_j = |c_j|²` over
/// `j ≥ 1`, `a = (2/H)·sqrt(Σ p_j)`, `b = Re c_0 / H`. When the non-DC power
/// is below [`MIN_POWER`], `f = a = 0`.
pub fn channel_parameters(
    dft: &RealDft,
    z: &[f64],
    dt: f64,
) -> Result<(f64, f64, f64, ChannelCache)> {
    let h = dft.len() as f64;
    let spec = dft.forward(z)?;
    let nyq = 1.0 / (2.0 * dt);
    let mut power = 0.0;
    let mut weighted = 0.0;
    for j in 1..spec.bins() {
        let p = spec.power(j);
        power += p;
        weighted += j as f64 / (h * dt) * p;
    }
    let b = spec.real[0] / h;
    let (f, a) = if power < MIN_POWER {
        (0.0, 0.0)
    } else {
        ((weighted / power).clamp(0.0, nyq), 2.0 / h * power.sqrt())
    };
    Ok((
        f,
        a,
        b,
        ChannelCache {
            spectrum: spec,
            power,
            f,
        },
    ))
}

/// Gradient of a scalar loss w.r.t. the latent curve, given `∂L/∂(f, a, b)`.
pub fn channel_parameters_backward(
    dft: &RealDft,
    cache: &ChannelCache,
    dt: f64,
    df: f64,
    da: f64,
    db: f64,
) -> Result<Vec<f64>> {
    let h = dft.len() as f64;
    let bins = cache.spectrum.bins();
    let mut gr = vec![0.0; bins];
    let mut gi = vec![0.0; bins];
    gr[0] = db / h;
    if cache.power >= MIN_POWER {
        let p = cache.power;
        let sp = p.sqrt();
        for j in 1..bins {
            let nu = j as f64 / (h * dt);
            let dp = df * (nu - cache.f) / p + da / (h * sp);
            gr[j] = 2.0 * cache.spectrum.real[j] * dp;
            gi[j] = 2.0 * cache.spectrum.imag[j] * dp;
        }
    }
    dft.adjoint(&gr, &gi)
}

/// Spectral `(f, a, b)` of every channel of a `c × H` latent curve.
pub fn parameterize(z: &DenseArray, dt: f64) -> Result<LatentParameterization> {
    let [c, h] = z.shape() else {
        return shape_err(format!("latent curve must be c×H, got {:?}", z.shape()));
    };
    let dft = RealDft::new(*h)?;
    let mut out = LatentParameterization::zeros(*c);
    for ch in 0..*c {
        let (f, a, b, _) = channel_parameters(&dft, z.row(ch), dt)?;
        out.f[ch] = f;
        out.a[ch] = a;
        out.b[ch] = b;
    }
    Ok(out)
}

/// `ẑ_k = a·sin(2π(f·T_k + φ)) + b` for one channel.
#[inline]
pub fn reconstruct_channel(phi: f64, f: f64, a: f64, b: f64, grid: &[f64], out: &mut [f64]) {
    for (o, &t) in out.iter_mut().zip(grid) {
        *o = a * (TAU * (f * t + phi)).sin() + b;
    }
}

/// `c × H` sinusoidal latent curve on the time grid.
pub fn reconstruct_latent(
    phi: &[f64],
    theta: &LatentParameterization,
    grid: &[f64],
) -> Result<DenseArray> {
    let c = theta.channels();
    if phi.len() != c {
        return shape_err(format!("{} phases for {c} channels", phi.len()));
    }
    let h = grid.len();
    let mut z = DenseArray::zeros(&[c, h]);
    for ch in 0..c {
        reconstruct_channel(
            phi[ch],
            theta.f[ch],
            theta.a[ch],
            theta.b[ch],
            grid,
            z.row_mut(ch),
        );
    }
    Ok(z)
}

/// Accumulates `∂L/∂(φ, f, a, b)` for one channel reconstructed with phase
/// `phi + shift` (the shift being `i·f·dt` for an `i`-step prediction, whose
/// own dependence on `f` enters through `time_shift = i·dt`).
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn reconstruct_channel_backward(
    phi: f64,
    f: f64,
    a: f64,
    grid: &[f64],
    time_shift: f64,
    dz: &[f64],
    grads: &mut [f64; 4],
) {
    let shifted = phi + f * time_shift;
    for (&g, &t) in dz.iter().zip(grid) {
        let arg = TAU * (f * t + shifted);
        let (s, co) = arg.sin_cos();
        let common = g * a * co * TAU;
        grads[0] += common;
        grads[1] += common * (t + time_shift);
        grads[2] += g * s;
        grads[3] += g;
    }
}
