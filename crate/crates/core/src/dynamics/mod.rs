//! Latent propagation, synthesis, interpolation, and the online target gate.

mod gate;
mod roll;

pub use gate::{
    acceptance_rate, anchor_losses, calibrate_threshold, gate_loss, gate_step, GateConfig,
    GateDecision, GateRecord, GateStream, InputBuffer, Verdict,
};
pub use roll::{
    decode_frames, interpolate_theta, propagate, synthesize, synthesize_schedule,
    synthesize_transition, target_frame, LatentRollState,
};
