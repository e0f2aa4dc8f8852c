//! Configured runs of the full pipeline: config parsing, staged training
//! with resume, evaluation, plots and ablation sweeps.

pub mod config;
pub mod eval;
pub mod pipeline;
pub mod plot;
pub mod record;
pub mod report;
pub mod sweep;

pub use config::{ExperimentConfig, Variant};
pub use eval::evaluate;
pub use pipeline::{load_components, load_splits, run_pipeline, run_until, Components, Splits, StageKeys};
pub use record::{RunRecord, Stage, StageRecord};
pub use report::render_report;
pub use sweep::{ablation_sweep, ablation_sweep_with, SweepAxis, SweepTable};
