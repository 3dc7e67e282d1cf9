//! Experiment grids over both heads, cross-validated hyperparameters, gain
//! computation, and table rendering.

mod config;
mod cv;
mod gain;
mod report;
mod runner;
mod tables;

pub use config::{Approach, ExperimentConfig, SplitGrid, TrainOverrides};
pub use cv::{cross_validate, stratified_folds, CvOutcome};
pub use gain::{compute_gain, tt_reduction_pct, Gain};
pub use report::{average_row, ExperimentReport, ReportRow};
pub use runner::{build_head, class_image_ids, head_sets, run_experiment, ExperimentData};
pub use tables::{emit_tables, parse_csv, TableFormat};
