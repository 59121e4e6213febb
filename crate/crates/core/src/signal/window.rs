use super::Trajectory;
use crate::error::{invalid, FldError, Result};
use crate::numerics::DenseArray;

/// A `d × H` window of consecutive frames, oldest column first.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    pub matrix: DenseArray,
    /// First frame covered.
    pub start: usize,
    /// Index of the newest frame (the segment's time index `t`).
    pub target: usize,
}

/// A segment `s_t` together with the `N` segments that follow it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    /// `N + 1` segments: `s_t, s_{t+1}, …, s_{t+N}`.
    pub segments: Vec<TrajectorySegment>,
}

/// Number of windows of length `h` at `stride` in a trajectory of `len` frames.
pub fn window_count(len: usize, h: usize, stride: usize) -> usize {
    if len < h || stride == 0 {
        0
    } else {
        (len - h) / stride + 1
    }
}

pub fn window(traj: &Trajectory, h: usize, stride: usize) -> Result<Vec<TrajectorySegment>> {
    if h == 0 || stride == 0 {
        return invalid("window length and stride must be positive");
    }
    if traj.len() < h {
        return Err(FldError::TooShort {
            len: traj.len(),
            needed: h,
        });
    }
    (0..window_count(traj.len(), h, stride))
        .map(|k| {
            let start = k * stride;
            Ok(TrajectorySegment {
                matrix: traj.segment_matrix(start, h)?,
                start,
                target: start + h - 1,
            })
        })
        .collect()
}

/// Training items for an `n`-step prediction horizon: every anchor whose
/// `n` successors fit inside the trajectory.
pub fn window_with_future(traj: &Trajectory, h: usize, n: usize) -> Result<Vec<TrainingItem>> {
    if traj.len() < h + n {
        return Err(FldError::TooShort {
            len: traj.len(),
            needed: h + n,
        });
    }
    let all = window(traj, h, 1)?;
    let count = traj.len() - h - n + 1;
    Ok((0..count)
        .map(|k| TrainingItem {
            segments: all[k..=k + n].to_vec(),
        })
        .collect())
}
