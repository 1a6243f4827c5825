//! Configuration, data files, model archives and experiment runs.

pub mod archive;
pub mod config;
pub mod experiment;
pub mod presets;
pub mod table;

pub use archive::{load_model, save_model, ArchivedModel, ModelArchive};
pub use config::{DataSource, ExperimentConfig, FileSource, ModelVariant};
pub use experiment::{fit, run_experiment, ExperimentReport, Fitted, FittedModel};
pub use presets::{preset, PRESETS};
pub use table::{load_csv, load_trajectory, save_trajectory, write_csv, Preprocess};
