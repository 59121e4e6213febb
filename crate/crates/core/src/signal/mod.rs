//! Trajectory data model, CSV ingestion, normalization, windowing and the
//! synthetic corpus generator.

mod corpus;
mod normalize;
mod synthetic;
mod trajectory;
mod window;

pub use corpus::{Corpus, CorpusManifest, ManifestEntry};
pub use normalize::{NormalizationStats, MIN_STD};
pub use synthetic::{
    family_corpus, family_spec, generate_synthetic, SyntheticMotionSpec, FAMILY_FREQUENCIES,
};
pub use trajectory::{
    dimension_groups, layout, load_csv, read_csv, save_csv, write_csv, CsvOptions, DimensionGroup,
    StateFrame, Trajectory, DEFAULT_DT, DEFAULT_STATE_DIM,
};
pub use window::{window, window_count, window_with_future, TrainingItem, TrajectorySegment};
