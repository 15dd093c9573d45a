//! Training, run-time conversion, and their persistent artifacts.

pub mod checkpoint;
pub mod convert;
pub mod manifest;
pub mod stats;
pub mod train;

pub use checkpoint::Checkpoint;
pub use convert::{analyze, convert, convert_features, Conversion};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use stats::{compute_speaker_stats, stats_key, StatsRow, StatsTable};
pub use train::{load_split, metrics_csv, train, write_metrics_csv, EpochMetrics, TrainOutcome, Trainer, Utterance, METRICS_HEADER};
