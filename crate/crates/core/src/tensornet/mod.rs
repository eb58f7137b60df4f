//! Small dense-tensor autodiff engine: the layers, losses, optimizer and
//! schedules the segmentation and video models need, nothing more.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod real;
mod schedule;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport, FD_FLOOR, FD_STEP};
pub use layers::{Conv2d, Linear};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore};
pub use real::Real;
pub use schedule::LrSchedule;
pub use tape::{ConvGeom, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}
