//! Skill samplers over θ, the skill-performance buffer, reward terms and a
//! surrogate learner for reproducible curriculum runs.

mod buffer;
mod gmm;
mod reward;
mod sampler;
mod sim;
mod surrogate;

pub use buffer::{
    alp_compute, Fifo, OfflineBuffer, SkillPerformanceBuffer, SkillPerformanceRecord,
    OFFLINE_BUFFER_CAPACITY, SKILL_BUFFER_CAPACITY,
};
pub use gmm::{bic, gmm_bic_select, gmm_fit_em, BicSelection, EmConfig, EmFit, GaussianMixture};
pub use reward::{
    default_tracking_terms, exploration_factor, normalized_performance, regularization_reward,
    tracking_reward, RewardTerm, TrackingReward, ACTION_RATE_WEIGHT, DOF_ACC_WEIGHT, TORQUE_WEIGHT,
};
pub use sampler::{
    AlpGmmConfig, AlpGmmState, ConfidenceBox, Sampler, SamplerKind, GMM_SAMPLER_COMPONENTS,
};
pub use sim::{
    region_label, run_curriculum_sim, write_summaries, write_traces, IterationSummary,
    OracleClassifier, OracleConfig, SimConfig, SimRun, TraceRow, TRACE_NOTES,
};
pub use surrogate::{LandscapeConfig, Preset, Region, SurrogateLandscape, SurrogateOutcome};
