//! Everything around the network: configuration profiles, dataset
//! generation and archives, the training loop with checkpoints, evaluation
//! against interpolation baselines, export of predictions, and reports.

pub mod archive;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod export;
pub mod layout;
pub mod report;
pub mod train;

pub use archive::Archive;
pub use config::{DataConfig, MapConfig, Profile, RunConfig, TrainConfig};
pub use dataset::{episode_inputs, Dataset, EvalEpisode, SceneRecord, Split};
pub use train::{smoothed_endpoints, train, Checkpoint, StepRecord, TrainOutput, Trainer};
pub use evaluate::{baseline_interp, baseline_nearest, evaluate, evaluate_all, MetricTable, Predictor, Summary};
pub use export::{predict_and_export, Exported, ExportInfo};
pub use report::write_report;
pub use layout::Layout;
