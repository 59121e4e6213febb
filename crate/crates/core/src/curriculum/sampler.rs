//! Skill samplers over θ.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::OfflineBuffer;
use super::gmm::{gmm_bic_select, gmm_fit_em, pick_weighted, EmConfig, GaussianMixture};
use crate::error::{invalid, shape_err, FldError, Result};
use crate::numerics::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Offline,
    Gmm,
    Random,
    AlpGmm,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [Self::Offline, Self::Gmm, Self::Random, Self::AlpGmm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Offline => "offline",
            Self::Gmm => "gmm",
            Self::Random => "random",
            Self::AlpGmm => "alpgmm",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = FldError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                FldError::InvalidArgument(format!(
                    "unknown sampler `{s}` (offline, gmm, random, alpgmm)"
                ))
            })
    }
}

/// Per-dimension `[μ − 2σ, μ + 2σ]` box around the encoded corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBox {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConfidenceBox {
    pub const WIDTH: f64 = 2.0;

    pub fn calibrate(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if dim == 0 {
            return Err(FldError::Empty(
                "confidence region needs encoded points".into(),
            ));
        }
        if points.iter().any(|p| p.len() != dim) {
            return shape_err("points disagree on dimension");
        }
        let mut mean = Vec::with_capacity(dim);
        let mut lower = Vec::with_capacity(dim);
        let mut upper = Vec::with_capacity(dim);
        for ch in 0..dim {
            let xs: Vec<f64> = points.iter().map(|p| p[ch]).collect();
            let (m, s) = (stats::mean(&xs), stats::std_dev(&xs));
            mean.push(m);
            lower.push(m - Self::WIDTH * s);
            upper.push(m + Self::WIDTH * s);
        }
        Ok(Self { mean, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
            .collect()
    }

    pub fn clip(&self, theta: &mut [f64]) {
        for (i, v) in theta.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlpGmmConfig {
    pub random_rate: f64,
    pub min_components: usize,
    pub max_components: usize,
    /// Iterations between refits.
    pub update_interval: usize,
    /// Iterations between skill-performance collections.
    pub collection_interval: usize,
    pub nearest_neighbors: usize,
    pub utility_floor: f64,
    pub em: EmConfig,
}

impl Default for AlpGmmConfig {
    fn default() -> Self {
        Self {
            random_rate: 0.2,
            min_components: 2,
            max_components: 10,
            update_interval: 50,
            collection_interval: 5,
            nearest_neighbors: 1,
            utility_floor: 1e-6,
            em: EmConfig::default(),
        }
    }
}

/// Mixture over `(θ, alp)` used as a bandit: each component is an arm whose
/// utility is its mean ALP.
#[derive(Clone, Debug)]
pub struct AlpGmmState {
    pub config: AlpGmmConfig,
    pub region: ConfidenceBox,
    pub mixture: Option<GaussianMixture>,
    theta_marginal: Option<GaussianMixture>,
    pub utilities: Vec<f64>,
    pending: Vec<(Vec<f64>, f64)>,
    pub updates: usize,
}

impl AlpGmmState {
    pub fn new(region: ConfidenceBox, config: AlpGmmConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.random_rate) {
            return invalid(format!(
                "random rate must lie in [0, 1], got {}",
                config.random_rate
            ));
        }
        if config.min_components == 0 || config.min_components > config.max_components {
            return invalid("bad component range");
        }
        if config.update_interval == 0 || config.collection_interval == 0 {
            return invalid("update and collection intervals must be positive");
        }
        Ok(Self {
            config,
            region,
            mixture: None,
            theta_marginal: None,
            utilities: Vec::new(),
            pending: Vec::new(),
            updates: 0,
        })
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Range θ coordinates span; ALP is mapped onto it before fitting.
    fn theta_span(&self) -> (f64, f64) {
        let lo = self
            .region
            .lower
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .region
            .upper
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + 1.0)
        }
    }

    /// Queues one `(θ, alp)` pair for the next [`update`](Self::update).
    pub fn observe(&mut self, theta: &[f64], alp: f64) -> Result<()> {
        if theta.len() != self.region.dim() {
            return shape_err(format!(
                "θ has {} values, sampler expects {}",
                theta.len(),
                self.region.dim()
            ));
        }
        self.pending.push((theta.to_vec(), alp));
        Ok(())
    }

    /// Fits on the pending window and clears it. With fewer points than the
    /// smallest mixture the old fit is kept. Returns whether a fit happened.
    pub fn update(&mut self) -> Result<bool> {
        let window = std::mem::take(&mut self.pending);
        if window.len() < self.config.min_components {
            log::debug!(
                "alp-gmm: {} points, keeping the previous mixture",
                window.len()
            );
            return Ok(false);
        }
        let (lo, hi) = self.theta_span();
        let amin = window.iter().map(|w| w.1).fold(f64::INFINITY, f64::min);
        let amax = window.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
        let scale = |a: f64| {
            if amax > amin {
                lo + (a - amin) / (amax - amin) * (hi - lo)
            } else {
                0.5 * (lo + hi)
            }
        };
        let points: Vec<Vec<f64>> = window
            .iter()
            .map(|(t, a)| {
                let mut p = t.clone();
                p.push(scale(*a));
                p
            })
            .collect();
        let em = EmConfig {
            seed: self.config.em.seed.wrapping_add(self.updates as u64),
            ..self.config.em.clone()
        };
        let sel = gmm_bic_select(
            &points,
            self.config.min_components..=self.config.max_components,
            &em,
        )?;
        let mix = sel.fit.mixture;
        let dim = self.region.dim();
        self.utilities = mix
            .means
            .iter()
            .map(|m| {
                let a = if amax > amin {
                    amin + (m[dim] - lo) / (hi - lo) * (amax - amin)
                } else {
                    amin
                };
                a.max(self.config.utility_floor)
            })
            .collect();
        self.theta_marginal = Some(mix.marginal(dim)?);
        self.mixture = Some(mix);
        self.updates += 1;
        Ok(true)
    }

    /// Arm drawn with probability proportional to utility, if fitted.
    pub fn choose_arm(&self, rng: &mut impl Rng) -> Option<usize> {
        self.mixture.as_ref()?;
        Some(pick_weighted(&self.utilities, rng))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let explore = rng.gen::<f64>() < self.config.random_rate;
        match (&self.theta_marginal, explore) {
            (Some(m), false) => {
                let arm = pick_weighted(&self.utilities, rng);
                let mut t = m.sample_component(arm, rng);
                self.region.clip(&mut t);
                t
            }
            _ => self.region.sample(rng),
        }
    }

    #[cfg(test)]
    pub(crate) fn set_utilities(&mut self, u: Vec<f64>) {
        self.utilities = u;
    }
}

/// A configured sampler.
#[derive(Clone, Debug)]
pub enum Sampler {
    Offline(OfflineBuffer),
    Gmm(GaussianMixture),
    Random(ConfidenceBox),
    AlpGmm(AlpGmmState),
}

pub const GMM_SAMPLER_COMPONENTS: usize = 8;

impl Sampler {
    /// Builds a sampler of `kind` from the encoded corpus.
    pub fn build(
        kind: SamplerKind,
        offline: &OfflineBuffer,
        alp: &AlpGmmConfig,
        em: &EmConfig,
    ) -> Result<Self> {
        if offline.is_empty() {
            return Err(FldError::Empty("offline buffer".into()));
        }
        Ok(match kind {
            SamplerKind::Offline => Self::Offline(offline.clone()),
            SamplerKind::Gmm => {
                let pts = offline.points();
                let k = GMM_SAMPLER_COMPONENTS.min(pts.len());
                Self::Gmm(gmm_fit_em(&pts, k, em)?.mixture)
            }
            SamplerKind::Random => Self::Random(ConfidenceBox::calibrate(&offline.points())?),
            SamplerKind::AlpGmm => Self::AlpGmm(AlpGmmState::new(
                ConfidenceBox::calibrate(&offline.points())?,
                alp.clone(),
            )?),
        })
    }

    pub fn kind(&self) -> SamplerKind {
        match self {
            Self::Offline(_) => SamplerKind::Offline,
            Self::Gmm(_) => SamplerKind::Gmm,
            Self::Random(_) => SamplerKind::Random,
            Self::AlpGmm(_) => SamplerKind::AlpGmm,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        Ok(match self {
            Self::Offline(b) => b.sample(rng)?,
            Self::Gmm(m) => m.sample(rng),
            Self::Random(b) => b.sample(rng),
            Self::AlpGmm(s) => s.sample(rng),
        })
    }

    /// Feeds back one collected episode; only ALP-GMM adapts.
    pub fn observe(&mut self, theta: &[f64], alp: f64) -> Result<()> {
        if let Self::AlpGmm(s) = self {
            s.observe(theta, alp)?;
        }
        Ok(())
    }

    /// Refits ALP-GMM on what was observed since the last call.
    pub fn update(&mut self) -> Result<bool> {
        match self {
            Self::AlpGmm(s) => s.update(),
            _ => Ok(false),
        }
    }
}
