//! Training loops, checkpoints, and the evaluation suite.

mod checkpoint;
mod config;
mod evaluate;
mod model;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::TrainConfig;
pub use evaluate::{
    evaluate_prediction, evaluation_anchors, export_latent_manifold, latent_track, phase_features,
    quasi_constancy_report, reconstruction_error, ComponentConstancy, EvaluationReport,
    GroupErrors, HorizonPredictor, LatentManifold, ManifoldPoint, ModelErrors,
    QuasiConstancyReport, WindowLatent, ANCHOR_STRIDE, ERROR_DEFINITION, ERROR_EPS,
};
pub use model::{ModelConfig, ModelKind, TrainedModel};
pub use trainer::{train, train_model, LossHistory, LossRecord, TrainRun};
