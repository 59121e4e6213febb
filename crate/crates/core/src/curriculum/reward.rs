//! Tracking and regularization rewards and the exploration factor.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, FldError, Result};
use crate::numerics::stats;

/// One tracked quantity: a channel range of the state layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerm {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub weight: f64,
    /// Temperature σ in `exp(−σ·‖·‖²)`.
    pub sigma: f64,
}

impl RewardTerm {
    fn new(name: &str, start: usize, end: usize, sigma: f64) -> Self {
        Self {
            name: name.into(),
            start,
            end,
            weight: 1.0,
            sigma,
        }
    }
}

/// Default terms over the 27-channel state layout.
pub fn default_tracking_terms() -> Vec<RewardTerm> {
    vec![
        RewardTerm::new("linear_velocity", 0, 3, 0.2),
        RewardTerm::new("angular_velocity", 3, 6, 0.2),
        RewardTerm::new("projected_gravity", 6, 9, 1.0),
        RewardTerm::new("leg_dof_pos", 9, 19, 1.0),
        RewardTerm::new("arm_dof_pos", 19, 27, 1.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingReward {
    pub total: f64,
    /// Unweighted `exp(−σ·‖·‖²)` per term.
    pub terms: Vec<(String, f64)>,
}

/// `r = Σ w_g·exp(−σ_g·‖target_g − measured_g‖²)`.
pub fn tracking_reward(
    target: &[f64],
    measured: &[f64],
    terms: &[RewardTerm],
) -> Result<TrackingReward> {
    if target.len() != measured.len() {
        return shape_err(format!(
            "target has {} channels, measured {}",
            target.len(),
            measured.len()
        ));
    }
    let mut total = 0.0;
    let mut out = Vec::with_capacity(terms.len());
    for t in terms {
        if t.start >= t.end || t.end > target.len() {
            return shape_err(format!(
                "term `{}` spans {}..{} of a {}-channel state",
                t.name,
                t.start,
                t.end,
                target.len()
            ));
        }
        let e: f64 = (t.start..t.end)
            .map(|i| (target[i] - measured[i]).powi(2))
            .sum();
        let r = (-t.sigma * e).exp();
        total += t.weight * r;
        out.push((t.name.clone(), r));
    }
    Ok(TrackingReward { total, terms: out })
}

/// Episode performance `mean(r)/Σw`, in `[0, 1]`.
pub fn normalized_performance(rewards: &[f64], terms: &[RewardTerm]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(FldError::Empty("episode has no rewards".into()));
    }
    let wsum: f64 = terms.iter().map(|t| t.weight).sum();
    if !(wsum > 0.0) {
        return invalid("reward weights sum to zero");
    }
    Ok((stats::mean(rewards) / wsum).clamp(0.0, 1.0))
}

pub const ACTION_RATE_WEIGHT: f64 = -0.01;
pub const DOF_ACC_WEIGHT: f64 = -2.5e-7;
pub const TORQUE_WEIGHT: f64 = -1e-5;

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Action-rate, joint-acceleration and torque penalties.
pub fn regularization_reward(
    prev_action: &[f64],
    action: &[f64],
    prev_joint_vel: &[f64],
    joint_vel: &[f64],
    torques: &[f64],
    dt: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if prev_action.len() != action.len() || prev_joint_vel.len() != joint_vel.len() {
        return shape_err("previous and current vectors differ in length");
    }
    let acc = sq_diff(joint_vel, prev_joint_vel) / (dt * dt);
    let torque: f64 = torques.iter().map(|t| t * t).sum();
    Ok(ACTION_RATE_WEIGHT * sq_diff(action, prev_action)
        + DOF_ACC_WEIGHT * acc
        + TORQUE_WEIGHT * torque)
}

/// Channel-averaged `std(running)/std(baseline)`. Channels without spread in
/// the baseline are skipped.
pub fn exploration_factor(running: &[Vec<f64>], baseline: &[Vec<f64>]) -> Result<f64> {
    if running.is_empty() || baseline.is_empty() {
        return Err(FldError::Empty(
            "exploration factor needs both point sets".into(),
        ));
    }
    let dim = baseline[0].len();
    if running.iter().chain(baseline).any(|p| p.len() != dim) {
        return shape_err("point sets disagree on dimension");
    }
    let mut ratios = Vec::with_capacity(dim);
    for ch in 0..dim {
        let b: Vec<f64> = baseline.iter().map(|p| p[ch]).collect();
        let sb = stats::std_dev(&b);
        if sb == 0.0 {
            log::info!("exploration factor: channel {ch} has no baseline spread, skipped");
            continue;
        }
        let r: Vec<f64> = running.iter().map(|p| p[ch]).collect();
        ratios.push(stats::std_dev(&r) / sb);
    }
    if ratios.is_empty() {
        return Err(FldError::Numerical(
            "every baseline channel is constant".into(),
        ));
    }
    Ok(stats::mean(&ratios))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_tracking() {
        let x: Vec<f64> = (0..27).map(|i| i as f64 * 0.1).collect();
        let r = tracking_reward(&x, &x, &default_tracking_terms()).unwrap();
        assert_eq!(r.total, 5.0);
        assert!(r.terms.iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn unit_velocity_error() {
        let t = vec![0.0; 27];
        let mut m = t.clone();
        m[0] = 1.0;
        let r = tracking_reward(&t, &m, &default_tracking_terms()).unwrap();
        assert!((r.terms[0].1 - 0.818_730_753_077_981_9).abs() < 1e-12);
        assert!((r.total - 4.818_730_753_077_982).abs() < 1e-12);
        let zero: Vec<RewardTerm> = default_tracking_terms()
            .into_iter()
            .map(|t| RewardTerm { weight: 0.0, ..t })
            .collect();
        assert_eq!(tracking_reward(&t, &m, &zero).unwrap().total, 0.0);
        assert!(tracking_reward(&t, &m[..20], &default_tracking_terms()).is_err());
    }

    #[test]
    fn normalized_episode() {
        let terms = default_tracking_terms();
        assert_eq!(normalized_performance(&[5.0, 5.0], &terms).unwrap(), 1.0);
        assert!((normalized_performance(&[2.5, 0.0], &terms).unwrap() - 0.25).abs() < 1e-12);
        assert!(normalized_performance(&[], &terms).is_err());
    }

    #[test]
    fn regularization_values() {
        let z = vec![0.0; 4];
        assert_eq!(
            regularization_reward(&z, &z, &z, &z, &z, 0.02).unwrap(),
            0.0
        );
        let a = vec![2.0, 0.0, 0.0, 0.0];
        assert!((regularization_reward(&z, &a, &z, &z, &z, 0.02).unwrap() + 0.04).abs() < 1e-15);
        let t = vec![100.0, 200.0, 200.0, 0.0];
        assert!((regularization_reward(&z, &z, &z, &z, &t, 0.02).unwrap() + 0.9).abs() < 1e-12);
        let t = vec![(1e5f64).sqrt(), 0.0];
        assert!((regularization_reward(&z, &z, &z, &z, &t, 0.02).unwrap() + 1.0).abs() < 1e-12);
        assert!(regularization_reward(&z, &z, &z, &z, &z, 0.0).is_err());
        // joint acceleration uses the velocity change over dt
        let v = vec![0.02, 0.0, 0.0, 0.0];
        assert!((regularization_reward(&z, &z, &z, &v, &z, 0.02).unwrap() + 2.5e-7).abs() < 1e-18);
    }

    #[test]
    fn exploration_cases() {
        let base = vec![
            vec![0.0, 1.0, 5.0],
            vec![2.0, 3.0, 5.0],
            vec![1.0, -1.0, 5.0],
        ];
        assert!((exploration_factor(&base, &base).unwrap() - 1.0).abs() < 1e-12);
        let single = vec![vec![3.0, 3.0, 3.0]; 4];
        assert_eq!(exploration_factor(&single, &base).unwrap(), 0.0);
        let doubled: Vec<Vec<f64>> = base
            .iter()
            .map(|p| vec![1.0 + 2.0 * (p[0] - 1.0), 1.0 + 2.0 * (p[1] - 1.0), p[2]])
            .collect();
        assert!((exploration_factor(&doubled, &base).unwrap() - 2.0).abs() < 1e-12);
        assert!(exploration_factor(&[], &base).is_err());
    }
}
