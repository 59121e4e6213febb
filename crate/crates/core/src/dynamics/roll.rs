use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::fld::{reconstruct_latent, FldModel, LatentParameterization, LatentState};
use crate::numerics::{wrap_cycles, BnMode, DenseArray};
use crate::par;
use crate::signal::Trajectory;

/// Phase, parameterization and step count of an autoregressive roll.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRollState {
    pub phi: LatentState,
    pub theta: LatentParameterization,
    pub step: u64,
}

impl LatentRollState {
    pub fn new(phi: Vec<f64>, theta: LatentParameterization) -> Result<Self> {
        if phi.len() != theta.channels() {
            return shape_err(format!(
                "{} phases for {} channels",
                phi.len(),
                theta.channels()
            ));
        }
        Ok(Self {
            phi: LatentState::wrapped(phi),
            theta,
            step: 0,
        })
    }

    /// State encoded from a normalized `d × H` segment.
    pub fn encode(model: &FldModel, segment: &DenseArray) -> Result<Self> {
        let enc = model.encode(segment, BnMode::Eval)?;
        Ok(Self {
            phi: enc.state(0),
            theta: enc.theta(0),
            step: 0,
        })
    }
}

/// One step of `φ ← wrap(φ + f·dt)`; θ is carried over unchanged.
pub fn propagate(state: &LatentRollState, dt: f64) -> LatentRollState {
    LatentRollState {
        phi: LatentState {
            phi: state
                .phi
                .phi
                .iter()
                .zip(&state.theta.f)
                .map(|(p, f)| wrap_cycles(p + f * dt))
                .collect(),
        },
        theta: state.theta.clone(),
        step: state.step + 1,
    }
}

const DECODE_CHUNK: usize = 64;

/// Newest decoded frame of each `(φ, θ)` pair, in normalized space.
pub fn decode_frames(
    model: &FldModel,
    states: &[(Vec<f64>, LatentParameterization)],
) -> Result<Vec<Vec<f64>>> {
    let (c, d, h) = (model.config.c, model.config.d, model.config.h);
    let chunks = states.len().div_ceil(DECODE_CHUNK);
    let parts = par::map_indexed(chunks, |ci| -> Result<Vec<Vec<f64>>> {
        let r = ci * DECODE_CHUNK..((ci + 1) * DECODE_CHUNK).min(states.len());
        let mut z = DenseArray::zeros(&[r.len(), c, h]);
        for (k, (phi, theta)) in states[r.clone()].iter().enumerate() {
            let zk = reconstruct_latent(phi, theta, model.grid())?;
            z.data_mut()[k * c * h..(k + 1) * c * h].copy_from_slice(zk.data());
        }
        let out = model.decode(&z, BnMode::Eval)?;
        Ok((0..r.len())
            .map(|k| {
                (0..d)
                    .map(|j| out.data()[(k * d + j) * h + h - 1])
                    .collect()
            })
            .collect())
    });
    let mut frames = Vec::with_capacity(states.len());
    for p in parts {
        frames.extend(p?);
    }
    Ok(frames)
}

/// Decoded, denormalized newest frame of one state.
pub fn target_frame(model: &FldModel, state: &LatentRollState) -> Result<Vec<f64>> {
    let mut f = decode_frames(model, &[(state.phi.phi.clone(), state.theta.clone())])?
        .pop()
        .expect("one state");
    model.norm.invert_frame(&mut f);
    Ok(f)
}

/// Rolls out with `thetas[k]` in effect at step `k`: emits the decoded
/// frame of the current state, then advances φ with that step's frequency.
pub fn synthesize_schedule(
    model: &FldModel,
    phi: &[f64],
    thetas: &[LatentParameterization],
) -> Result<Trajectory> {
    if thetas.is_empty() {
        return invalid("synthesis needs at least one step");
    }
    let dt = model.config.dt;
    let mut state = LatentRollState::new(phi.to_vec(), thetas[0].clone())?;
    let mut states = Vec::with_capacity(thetas.len());
    for theta in thetas {
        if theta.channels() != model.config.c {
            return shape_err(format!(
                "θ has {} channels, model has {}",
                theta.channels(),
                model.config.c
            ));
        }
        state.theta = theta.clone();
        states.push((state.phi.phi.clone(), theta.clone()));
        state = propagate(&state, dt);
    }
    let mut frames = decode_frames(model, &states)?;
    let d = model.config.d;
    let mut data = Vec::with_capacity(frames.len() * d);
    for f in frames.iter_mut() {
        model.norm.invert_frame(f);
        data.extend_from_slice(f);
    }
    Trajectory::new(d, data, dt, None)
}

/// `steps` frames of the autoregressive roll from `(φ, θ)`.
pub fn synthesize(
    model: &FldModel,
    phi: &[f64],
    theta: &LatentParameterization,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return invalid("steps must be positive");
    }
    synthesize_schedule(model, phi, &vec![theta.clone(); steps])
}

/// `θ_k = (1 − λ_k)·θ_src + λ_k·θ_dst` with `λ_k = k/steps`, `k = 0..=steps`.
/// With `steps == 0` the schedule is just `θ_dst`.
pub fn interpolate_theta(
    src: &LatentParameterization,
    dst: &LatentParameterization,
    steps: usize,
) -> Result<Vec<LatentParameterization>> {
    if src.channels() != dst.channels() {
        return shape_err(format!(
            "cannot blend {} channels into {}",
            src.channels(),
            dst.channels()
        ));
    }
    if steps == 0 {
        return Ok(vec![dst.clone()]);
    }
    Ok((0..=steps)
        .map(|k| {
            if k == steps {
                dst.clone()
            } else {
                src.lerp(dst, k as f64 / steps as f64)
            }
        })
        .collect())
}

/// Synthesized transition: `hold` frames of `src`, a `steps`-frame blend,
/// then `hold` frames of `dst`.
pub fn synthesize_transition(
    model: &FldModel,
    phi: &[f64],
    src: &LatentParameterization,
    dst: &LatentParameterization,
    steps: usize,
    hold: usize,
) -> Result<Trajectory> {
    let mut sched = vec![src.clone(); hold];
    sched.extend(interpolate_theta(src, dst, steps)?);
    sched.extend(std::iter::repeat(dst.clone()).take(hold));
    synthesize_schedule(model, phi, &sched)
}
