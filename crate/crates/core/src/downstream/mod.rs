//! Video-level tasks on top of the segmenter: S/F change between two
//! videos, per-view S/F regression with view aggregation, and readmission
//! by a per-view majority vote.

mod fused;
mod nets;
mod tasks;
mod train;

pub use fused::{FusedInput, SegSource, FUSED_CHANNELS};
pub use nets::{EncoderSpec, ReadmissionNet, SfChangeNet, SfRegressNet, VideoEncoder, ENCODER_PREFIX, REGRESS_HIDDEN};
pub use tasks::{
    aggregate_views, build_pairs, collapse_2class, label_pair, majority_vote, Aggregation, PairExample, PairLabel, Role,
    TwoClass, SAME_TOLERANCE,
};
pub use train::{
    day_rmse, fuse_videos, predict_days, predict_sf, predict_sf_change, readmission_cases, readmission_predict,
    train_readmission, train_sf_change, train_sf_regress, video_targets, DayPrediction, ReadmissionCase,
    ReadmissionPrediction, TaskEpoch, TaskTrainConfig, Trained, VideoBank, VideoTarget,
};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::tensornet::TensorError;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("no eligible {0:?} pairs")]
    NoPairs(Role),
    #[error("cannot aggregate zero predictions")]
    EmptyAggregation,
    #[error("video has no frames")]
    EmptyVideo,
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("unknown video or patient {0}")]
    MissingVideo(String),
    #[error("missing view or day: {0}")]
    MissingView(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("segmenter: {0}")]
    Segmenter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
