//! Seeded multi-harmonic generator used as a stand-in motion corpus.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{layout, Trajectory, DEFAULT_DT, DEFAULT_STATE_DIM};
use crate::error::{invalid, Result};

/// Base frequencies (Hz) of the five built-in motion families.
pub const FAMILY_FREQUENCIES: [f64; 5] = [0.8, 1.2, 1.6, 2.0, 2.4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotionSpec {
    pub base_frequency: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub amplitude: Vec<f64>,
    pub phase_offset: Vec<f64>,
    pub mean: Vec<f64>,
    /// Relative amplitude of harmonic 1, 2, …
    pub harmonics: Vec<f64>,
    #[serde(default)]
    pub noise_std: f64,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seconds added to every frame time.
    #[serde(default)]
    pub time_offset: f64,
    #[serde(default)]
    pub label: Option<String>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl SyntheticMotionSpec {
    pub fn dim(&self) -> usize {
        self.amplitude.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = 1.0 / (2.0 * self.dt);
        if !(self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.base_frequency > 0.0 && self.base_frequency < nyq) {
            return invalid(format!(
                "base frequency {} Hz outside (0, {nyq})",
                self.base_frequency
            ));
        }
        if !(self.noise_std >= 0.0) {
            return invalid("noise std must be non-negative");
        }
        let d = self.dim();
        if d == 0 || self.phase_offset.len() != d || self.mean.len() != d {
            return invalid("amplitude, phase_offset and mean must share one non-zero length");
        }
        if self.harmonics.is_empty() {
            return invalid("at least one harmonic is required");
        }
        if self.frames == 0 {
            return invalid("frames must be positive");
        }
        Ok(())
    }
}

/// `x_j(t) = mean_j + Σ_h amp_j·rel_h·sin(2π(h·f·τ + off_j)) + noise`, with
/// `τ = t·dt + time_offset`.
pub fn generate_synthetic(spec: &SyntheticMotionSpec) -> Result<Trajectory> {
    spec.validate()?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("valid std");
    let mut data = Vec::with_capacity(d * spec.frames);
    for t in 0..spec.frames {
        let tau = t as f64 * spec.dt + spec.time_offset;
        for j in 0..d {
            let mut v = spec.mean[j];
            for (h, rel) in spec.harmonics.iter().enumerate() {
                let hf = (h + 1) as f64 * spec.base_frequency;
                v += spec.amplitude[j] * rel * (TAU * (hf * tau + spec.phase_offset[j])).sin();
            }
            if spec.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(v);
        }
    }
    Trajectory::new(d, data, spec.dt, spec.label.clone())
}

/// Spec for variant `variant` of built-in family `family` (0..5) in the 27-D
/// layout. Variants share a family's waveform shape and differ by an
/// amplitude scale and a time shift.
pub fn family_spec(
    family: usize,
    variant: u64,
    frames: usize,
    noise_std: f64,
    seed: u64,
) -> SyntheticMotionSpec {
    let f = FAMILY_FREQUENCIES[family % FAMILY_FREQUENCIES.len()];
    let mut shape_rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d ^ (family as u64) << 8);
    let d = DEFAULT_STATE_DIM;
    let mut amplitude = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut phase_offset = vec![0.0; d];
    for j in 0..d {
        phase_offset[j] = shape_rng.gen_range(0.0..1.0);
        let (m, a) = if layout::LIN_VEL.contains(&j) {
            let m = if j == 0 {
                0.3 + 0.3 * family as f64
            } else {
                0.0
            };
            (m, shape_rng.gen_range(0.05..0.2))
        } else if layout::ANG_VEL.contains(&j) {
            (0.0, shape_rng.gen_range(0.1..0.5))
        } else if layout::GRAVITY.contains(&j) {
            (
                if j == 8 { -1.0 } else { 0.0 },
                shape_rng.gen_range(0.01..0.05),
            )
        } else if layout::LEG_JOINTS.contains(&j) {
            (
                shape_rng.gen_range(-0.5..0.5),
                shape_rng.gen_range(0.1..0.6),
            )
        } else {
            (
                shape_rng.gen_range(-0.5..0.5),
                shape_rng.gen_range(0.05..0.4),
            )
        };
        mean[j] = m;
        amplitude[j] = a;
    }
    let second = shape_rng.gen_range(0.1..0.35);
    let mut var_rng = ChaCha8Rng::seed_from_u64(seed ^ variant.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let scale = if variant == 0 {
        1.0
    } else {
        var_rng.gen_range(0.9..1.1)
    };
    let time_offset = var_rng.gen_range(0.0..1.0 / f);
    amplitude.iter_mut().for_each(|a| *a *= scale);
    SyntheticMotionSpec {
        base_frequency: f,
        dt: DEFAULT_DT,
        amplitude,
        phase_offset,
        mean,
        harmonics: vec![1.0, second],
        noise_std,
        frames,
        seed: seed
            .wrapping_add(variant)
            .wrapping_add((family as u64) << 32),
        time_offset,
        label: Some(format!("family{family}_{f:.1}hz")),
    }
}

/// `per_family` trajectories of each built-in family, family-major order.
pub fn family_corpus(
    per_family: usize,
    frames: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(per_family * FAMILY_FREQUENCIES.len());
    for fam in 0..FAMILY_FREQUENCIES.len() {
        for v in 0..per_family {
            out.push(generate_synthetic(&family_spec(
                fam, v as u64, frames, noise_std, seed,
            ))?);
        }
    }
    Ok(out)
}
