use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{shape_err, FldError, Result};

/// Standard deviations below this are replaced by 1.
pub const MIN_STD: f64 = 1e-6;

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Fits population mean/std over every frame of every trajectory.
    pub fn fit<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let mut d = None;
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let trajs: Vec<&Trajectory> = trajectories.into_iter().collect();
        for t in &trajs {
            match d {
                None => {
                    d = Some(t.dim());
                    sum = vec![0.0; t.dim()];
                }
                Some(dd) if dd != t.dim() => {
                    return shape_err(format!("mixed state dimensions {dd} and {}", t.dim()))
                }
                _ => {}
            }
            for f in t.frames() {
                for (s, v) in sum.iter_mut().zip(f) {
                    *s += v;
                }
            }
            count += t.len();
        }
        let d = d.ok_or_else(|| FldError::Empty("no trajectories to normalize".into()))?;
        if count < 2 {
            return Err(FldError::Empty(format!(
                "normalization needs at least 2 frames, got {count}"
            )));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for t in &trajs {
            for f in t.frames() {
                for ((s, v), m) in sq.iter_mut().zip(f).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_frame(&self, frame: &mut [f64]) {
        for ((v, m), s) in frame.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn invert_frame(&self, frame: &mut [f64]) {
        for ((v, m), s) in frame.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.map(traj, Self::apply_frame)
    }

    pub fn invert(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.map(traj, Self::invert_frame)
    }

    fn map(&self, traj: &Trajectory, f: fn(&Self, &mut [f64])) -> Result<Trajectory> {
        if traj.dim() != self.dim() {
            return shape_err(format!(
                "trajectory has {} dims, statistics have {}",
                traj.dim(),
                self.dim()
            ));
        }
        let mut out = traj.clone();
        let d = out.dim();
        for fr in out.data_mut().chunks_exact_mut(d) {
            f(self, fr);
        }
        Ok(out)
    }

    /// Normalizes a `d × H` segment stored row-major (one row per dimension).
    pub fn apply_segment(&self, seg: &mut [f64], h: usize) {
        for (dim, row) in seg.chunks_exact_mut(h).enumerate() {
            row.iter_mut()
                .for_each(|v| *v = (*v - self.mean[dim]) / self.std[dim]);
        }
    }
}
