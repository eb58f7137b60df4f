//! Experiment orchestration: cohort and fold resolution, training and
//! evaluation across the threshold grid and folds, and report assembly.

mod config;
mod report;
mod runs;
mod tools;

pub use config::{declared_deviations, ExperimentConfig, PairCaps, SegInput, Task, DATA_DIR_ENV};
pub use report::{read_results, write_report, write_results, MetricSummary, ReportFiles, ResultRow};
pub use runs::{
    eval_seg_runs, eval_task_runs, evaluate_segmenter, run, seg_examples, train_seg_runs, train_task_runs, RunContext,
    RunKey, SegScores,
};
pub use tools::{gradcheck_suite, threshold_sweep, threshold_tool, GradCheckEntry};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("data: {0}")]
    Data(#[from] crate::dataio::DataError),
    #[error("label: {0}")]
    Label(#[from] crate::label::LabelError),
    #[error("segmentation: {0}")]
    Seg(#[from] crate::segmodel::SegError),
    #[error("downstream: {0}")]
    Downstream(#[from] crate::downstream::DownstreamError),
    #[error("tensor: {0}")]
    Tensor(#[from] crate::tensornet::TensorError),
    #[error("metric: {0}")]
    Metric(#[from] crate::metrics::MetricError),
    #[error("phantom: {0}")]
    Phantom(#[from] crate::phantom::PhantomError),
    #[error("missing checkpoint {0}; run the matching train step first")]
    MissingCheckpoint(String),
    #[error("report validation failed: {0}")]
    Report(String),
    #[error("{} of {} sub-runs failed: {}", failed.len(), total, failed.join("; "))]
    SubRuns { failed: Vec<String>, total: usize },
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}
