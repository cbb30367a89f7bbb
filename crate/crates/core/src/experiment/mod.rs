//! Config-driven training runs, sweeps, prediction and report files.

mod config;
mod predict;
mod report;
mod sweep;
mod train;

pub use config::{ExperimentConfig, OptimizerOverrides, Preset, SyntheticSpec};
pub use predict::{predict_cmd, predict_dataset, Prediction, PredictionMetrics, PredictionReport};
pub use report::{emit_report, Report, ReportFormat, CURVE_FILE, CURVE_HEADER, REPORT_FILE, SWEEP_HEADER};
pub use sweep::{run_sweep, SweepAxis, SweepReport, SweepRow, SWEEP_CSV, SWEEP_JSON};
pub use train::{
    build_for, evaluate, prepare_data, run_training, train_on, EpochRecord, Evaluation, PassStats, Prepared,
    RunReport, StepOutcome, Trainer, MODEL_FILE, OPTIMIZER_FILE,
};
