//! Surrogate learner standing in for policy training: competence per motion
//! region grows with practice and plateaus at the region's attainable level.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::buffer::OfflineBuffer;
use crate::error::{invalid, shape_err, FldError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub centre: Vec<f64>,
    pub radius: f64,
    pub max_performance: f64,
    pub learnable: bool,
    /// Part of the reference corpus, as opposed to a motion only reachable
    /// by exploring.
    pub in_dataset: bool,
    /// Region whose relative competence scales learning here.
    #[serde(default)]
    pub parent: Option<usize>,
}

impl Region {
    pub fn contains(&self, theta: &[f64]) -> bool {
        sq_dist(&self.centre, theta) <= self.radius * self.radius
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLandscape {
    pub regions: Vec<Region>,
    pub competence: Vec<f64>,
    /// Fraction of the remaining gap closed per visit.
    pub learning_rate: f64,
    /// Competence unlearnable regions plateau at.
    pub floor: f64,
    /// Relative standard deviation of the observation noise.
    pub noise: f64,
}

/// Result of one surrogate episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOutcome {
    pub performance: f64,
    pub region: Option<usize>,
}

impl SurrogateLandscape {
    pub const LEARNING_RATE: f64 = 0.05;
    pub const FLOOR: f64 = 0.1;

    pub fn new(regions: Vec<Region>, learning_rate: f64, floor: f64, noise: f64) -> Result<Self> {
        let dim = regions.first().map(|r| r.centre.len()).unwrap_or(0);
        if dim == 0 {
            return Err(FldError::Empty("landscape has no regions".into()));
        }
        if regions.iter().any(|r| r.centre.len() != dim) {
            return shape_err("regions disagree on dimension");
        }
        if regions
            .iter()
            .any(|r| !(r.radius > 0.0) || !(0.0..=1.0).contains(&r.max_performance))
        {
            return invalid("regions need a positive radius and a maximum in [0, 1]");
        }
        for (i, r) in regions.iter().enumerate() {
            if let Some(p) = r.parent {
                if p >= regions.len() || p == i || regions[p].max_performance == 0.0 {
                    return invalid(format!("region {i} has an invalid parent {p}"));
                }
            }
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return invalid(format!(
                "learning rate must lie in (0, 1], got {learning_rate}"
            ));
        }
        if !(0.0..=1.0).contains(&floor) || !(noise >= 0.0) {
            return invalid("floor must lie in [0, 1] and noise must be non-negative");
        }
        Ok(Self {
            competence: vec![0.0; regions.len()],
            regions,
            learning_rate,
            floor,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.regions[0].centre.len()
    }

    /// Region a θ falls into: unlearnable regions take precedence, otherwise
    /// the learnable region with the nearest centre.
    pub fn locate(&self, theta: &[f64]) -> Option<usize> {
        let containing = || {
            self.regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.contains(theta))
        };
        if let Some((i, _)) = containing().find(|(_, r)| !r.learnable) {
            return Some(i);
        }
        containing()
            .min_by(|a, b| sq_dist(&a.1.centre, theta).total_cmp(&sq_dist(&b.1.centre, theta)))
            .map(|(i, _)| i)
    }

    pub fn is_unlearnable(&self, theta: &[f64]) -> bool {
        self.locate(theta)
            .is_some_and(|i| !self.regions[i].learnable)
    }

    fn ceiling(&self, i: usize) -> f64 {
        let r = &self.regions[i];
        if r.learnable {
            r.max_performance
        } else {
            r.max_performance.min(self.floor)
        }
    }

    /// Moves region `i` towards its ceiling by `weight·η` of the remaining
    /// gap. A region with a parent learns in proportion to the parent's
    /// relative competence.
    pub fn practice(&mut self, i: usize, weight: f64) {
        let r = &self.regions[i];
        let unlock = match r.parent {
            Some(p) => self.competence[p] / self.regions[p].max_performance,
            None => 1.0,
        };
        let gap = self.ceiling(i) - self.competence[i];
        self.competence[i] += (self.learning_rate * weight * unlock).min(1.0) * gap;
    }

    /// Performance on `theta` without practising it: region competence
    /// times a `1 − (d/R)⁴` profile, with relative noise.
    pub fn evaluate(&self, theta: &[f64], rng: &mut impl Rng) -> Result<SurrogateOutcome> {
        if theta.len() != self.dim() {
            return shape_err(format!(
                "θ has {} values, landscape has {}",
                theta.len(),
                self.dim()
            ));
        }
        let region = self.locate(theta);
        let Some(i) = region else {
            return Ok(SurrogateOutcome {
                performance: 0.0,
                region,
            });
        };
        let noise: f64 = if self.noise > 0.0 {
            self.noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        } else {
            0.0
        };
        let level = |j: usize| {
            let r = &self.regions[j];
            let x2 = sq_dist(&r.centre, theta) / (r.radius * r.radius);
            self.competence[j] * (1.0 - x2 * x2).max(0.0)
        };
        // overlapping learnable regions: the best one counts, which keeps
        // performance continuous across their boundaries
        let base = if self.regions[i].learnable {
            (0..self.regions.len())
                .filter(|&j| self.regions[j].learnable && self.regions[j].contains(theta))
                .map(level)
                .fold(0.0, f64::max)
        } else {
            level(i)
        };
        let performance = (base * (1.0 + noise)).clamp(0.0, self.ceiling(i).max(base));
        Ok(SurrogateOutcome {
            performance,
            region,
        })
    }

    /// One practice episode on `theta` followed by its evaluation.
    pub fn step(&mut self, theta: &[f64], rng: &mut impl Rng) -> Result<SurrogateOutcome> {
        if theta.len() != self.dim() {
            return shape_err(format!(
                "θ has {} values, landscape has {}",
                theta.len(),
                self.dim()
            ));
        }
        if let Some(i) = self.locate(theta) {
            self.practice(i, 1.0);
        }
        self.evaluate(theta, rng)
    }
}

/// Share of unlearnable motions in the reference corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "0")]
    Clean,
    #[serde(rename = "10")]
    Light,
    #[serde(rename = "60")]
    Heavy,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::Clean, Self::Light, Self::Heavy];

    pub fn unlearnable_fraction(self) -> f64 {
        match self {
            Self::Clean => 0.0,
            Self::Light => 0.1,
            Self::Heavy => 0.6,
        }
    }

    pub fn percent(self) -> u32 {
        (self.unlearnable_fraction() * 100.0).round() as u32
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.percent())
    }
}

impl FromStr for Preset {
    type Err = FldError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.percent().to_string() == s.trim_end_matches('%'))
            .ok_or_else(|| FldError::InvalidArgument(format!("unknown preset `{s}` (0, 10, 60)")))
    }
}

/// Geometry of a generated landscape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub dim: usize,
    pub dataset_regions: usize,
    pub unlearnable_fraction: f64,
    pub novel_regions: usize,
    pub radius: f64,
    /// Minimum centre distance as a multiple of the summed radii.
    pub min_separation: f64,
    /// Dataset centres are drawn from `[−spread, spread]^dim`.
    pub spread: f64,
    /// Unlearnable centres are drawn from a cube of this half-width around
    /// an anchor `spread` away from the origin.
    pub unlearnable_spread: f64,
    /// Novel centres are drawn from `[−novel_spread, novel_spread]^dim`.
    pub novel_spread: f64,
    pub dataset_max: f64,
    pub novel_max: f64,
    pub encodings_per_region: usize,
    pub learning_rate: f64,
    pub floor: f64,
    pub noise: f64,
}

impl LandscapeConfig {
    pub fn preset(preset: Preset, dim: usize) -> Self {
        Self {
            dim,
            dataset_regions: 10,
            unlearnable_fraction: preset.unlearnable_fraction(),
            novel_regions: 15,
            radius: 0.45,
            min_separation: 0.6,
            spread: 1.0,
            unlearnable_spread: 0.5,
            novel_spread: 1.5,
            dataset_max: 0.9,
            novel_max: 0.8,
            encodings_per_region: 200,
            learning_rate: SurrogateLandscape::LEARNING_RATE,
            floor: SurrogateLandscape::FLOOR,
            noise: 0.02,
        }
    }

    pub fn unlearnable_count(&self) -> usize {
        (self.unlearnable_fraction * self.dataset_regions as f64).round() as usize
    }

    /// Builds the landscape and the encoded reference corpus drawn from its
    /// dataset regions.
    pub fn generate(&self, rng: &mut impl Rng) -> Result<(SurrogateLandscape, OfflineBuffer)> {
        if self.dim == 0 || self.dataset_regions == 0 {
            return invalid("landscape needs a dimension and at least one dataset region");
        }
        if !(0.0..=1.0).contains(&self.unlearnable_fraction) {
            return invalid(format!(
                "unlearnable fraction {} outside [0, 1]",
                self.unlearnable_fraction
            ));
        }
        let unlearnable = self.unlearnable_count();
        let mut regions: Vec<Region> = Vec::new();
        // regions of the same kind may overlap; learnable and unlearnable never do
        let place = |at: &[f64],
                     spread: f64,
                     learnable: bool,
                     regions: &mut Vec<Region>,
                     rng: &mut dyn rand::RngCore|
         -> Result<Vec<f64>> {
            for _ in 0..10_000 {
                let c: Vec<f64> = at
                    .iter()
                    .map(|a| a + rng.gen_range(-spread..spread))
                    .collect();
                if regions.iter().all(|r| {
                    let sep = if r.learnable == learnable {
                        self.min_separation
                    } else {
                        1.0
                    };
                    sq_dist(&r.centre, &c).sqrt() >= sep * (r.radius + self.radius)
                }) {
                    return Ok(c);
                }
            }
            Err(FldError::InvalidArgument(
                "regions do not fit into the landscape".into(),
            ))
        };
        // unlearnable motions form one motion type clustered around an anchor
        // on the rim of the dataset
        let zero = vec![0.0; self.dim];
        let gauss = Normal::new(0.0, 1.0).expect("unit normal");
        let dir: Vec<f64> = (0..self.dim).map(|_| gauss.sample(rng)).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let anchor: Vec<f64> = dir.iter().map(|v| v / len * self.spread).collect();
        for i in 0..self.dataset_regions {
            let centre = if i < unlearnable {
                place(&anchor, self.unlearnable_spread, false, &mut regions, rng)?
            } else {
                place(&zero, self.spread, true, &mut regions, rng)?
            };
            regions.push(Region {
                centre,
                radius: self.radius,
                max_performance: self.dataset_max,
                learnable: i >= unlearnable,
                in_dataset: true,
                parent: None,
            });
        }
        let mut novel = Vec::with_capacity(self.novel_regions);
        for _ in 0..self.novel_regions {
            let centre = place(&zero, self.novel_spread, true, &mut regions, rng)?;
            novel.push(centre.clone());
            regions.push(Region {
                centre,
                radius: self.radius,
                max_performance: 0.0,
                learnable: true,
                in_dataset: false,
                parent: None,
            });
        }
        regions.truncate(self.dataset_regions);
        // novel regions hang off the nearest learnable region closer to the
        // data, so competence spreads outward from the corpus
        let origin: Vec<f64> = (0..self.dim)
            .map(|d| regions.iter().map(|r| r.centre[d]).sum::<f64>() / regions.len() as f64)
            .collect();
        novel.sort_by(|a, b| sq_dist(a, &origin).total_cmp(&sq_dist(b, &origin)));
        for centre in novel {
            let parent = regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.learnable)
                .min_by(|a, b| {
                    sq_dist(&a.1.centre, &centre).total_cmp(&sq_dist(&b.1.centre, &centre))
                })
                .map(|(i, _)| i);
            regions.push(Region {
                centre,
                radius: self.radius,
                max_performance: self.novel_max,
                learnable: true,
                in_dataset: false,
                parent,
            });
        }
        let mut offline = OfflineBuffer::new();
        for r in regions.iter().filter(|r| r.in_dataset) {
            for _ in 0..self.encodings_per_region {
                // uniform in the ball
                let dir: Vec<f64> = (0..self.dim).map(|_| gauss.sample(rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let rad = r.radius * rng.gen::<f64>().powf(1.0 / self.dim as f64);
                offline.push(
                    r.centre
                        .iter()
                        .zip(&dir)
                        .map(|(c, d)| c + rad * d / norm)
                        .collect(),
                );
            }
        }
        Ok((
            SurrogateLandscape::new(regions, self.learning_rate, self.floor, self.noise)?,
            offline,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_regions() -> SurrogateLandscape {
        SurrogateLandscape::new(
            vec![
                Region {
                    centre: vec![0.0, 0.0],
                    radius: 1.0,
                    max_performance: 0.9,
                    learnable: true,
                    in_dataset: true,
                    parent: None,
                },
                Region {
                    centre: vec![5.0, 0.0],
                    radius: 1.0,
                    max_performance: 0.9,
                    learnable: false,
                    in_dataset: true,
                    parent: None,
                },
            ],
            0.05,
            0.1,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn competence_converges() {
        let mut l = two_regions();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut prev = 0.0;
        for k in 1..=200 {
            let r = l.step(&[0.0, 0.0], &mut rng).unwrap().performance;
            assert!(r >= prev);
            // closed form of the geometric recursion
            assert!((r - 0.9 * (1.0 - 0.95f64.powi(k))).abs() < 1e-12);
            prev = r;
        }
        assert!((prev - 0.9).abs() < 0.05);
        // the profile tapers towards the boundary
        let edge = l.evaluate(&[0.9, 0.0], &mut rng).unwrap().performance;
        assert!((edge - prev * (1.0 - 0.81 * 0.81)).abs() < 1e-12);
    }

    #[test]
    fn overlapping_regions_take_the_best() {
        let mut l = two_regions();
        l.regions[1].centre = vec![1.5, 0.0];
        l.regions[1].learnable = true;
        l.competence = vec![0.8, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // nearer to region 1, but region 0 still performs better there
        let o = l.evaluate(&[0.8, 0.0], &mut rng).unwrap();
        assert_eq!(o.region, Some(1));
        assert!((o.performance - 0.8 * (1.0 - 0.64 * 0.64)).abs() < 1e-12);
    }

    #[test]
    fn parent_gates_learning() {
        let mut l = two_regions();
        l.regions.push(Region {
            centre: vec![0.0, 3.0],
            radius: 1.0,
            max_performance: 0.8,
            learnable: true,
            in_dataset: false,
            parent: Some(0),
        });
        l.competence.push(0.0);
        l.practice(2, 1.0);
        assert_eq!(l.competence[2], 0.0);
        l.competence[0] = 0.45;
        l.practice(2, 1.0);
        assert!((l.competence[2] - 0.05 * 0.5 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn unlearnable_and_outside() {
        let mut l = two_regions();
        l.noise = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let o = l.step(&[5.2, 0.0], &mut rng).unwrap();
            assert!(o.performance <= 0.1 && o.performance >= 0.0);
            assert_eq!(o.region, Some(1));
            let o = l.step(&[5.0, 0.0], &mut rng).unwrap();
            assert!(o.performance <= 0.1);
        }
        let o = l.step(&[2.5, 2.5], &mut rng).unwrap();
        assert_eq!(o.performance, 0.0);
        assert_eq!(o.region, None);
        assert!(l.step(&[0.0], &mut rng).is_err());
    }

    #[test]
    fn presets() {
        for p in Preset::ALL {
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
            let cfg = LandscapeConfig::preset(p, 3);
            let (l, off) = cfg.generate(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let bad = l.regions.iter().filter(|r| !r.learnable).count();
            assert_eq!(
                bad,
                [0, 1, 6][Preset::ALL.iter().position(|q| *q == p).unwrap()]
            );
            assert_eq!(off.len(), 10 * 200);
            for r in l.regions.iter().filter(|r| r.in_dataset) {
                assert!(off.iter().any(|x| r.contains(x)));
            }
            assert!(off.iter().all(|x| l.locate(x).is_some()));
            for a in l.regions.iter().filter(|r| r.learnable) {
                for b in l.regions.iter().filter(|r| !r.learnable) {
                    assert!(sq_dist(&a.centre, &b.centre).sqrt() >= a.radius + b.radius);
                }
            }
        }
        assert!("25".parse::<Preset>().is_err());
    }
}
