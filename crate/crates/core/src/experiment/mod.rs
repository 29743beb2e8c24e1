//! Config-driven experiment runner behind the command-line tool.

mod config;
mod run;

pub use config::{
    BenchmarkConfig, CalibrationConfig, DatasetConfig, ExperimentConfig, MethodConfig, MethodKind, ModelConfig,
    Overrides, TrainingConfig,
};
pub use run::{
    benchmark_cell, cmd_benchmark, cmd_calibrate, cmd_sample, cmd_train, cmd_validate, run_method, samples_to_csv,
    traces_to_csv, BenchContext, BenchmarkRow, BenchmarkSummary, BudgetRow, Experiment, SampleSummary, TrainSummary,
    ValidationReport, BENCHMARK_HEADER, CALIBRATION_FILE, CHECKPOINT_FILE, DATASET_FILE, PLOT_SCRIPT,
};
