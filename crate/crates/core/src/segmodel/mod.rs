//! Six-channel pyramid segmenter and its confidence-thresholded trainer.

mod augment;
mod model;
mod train;

pub use augment::{augment, AugmentConfig, AugmentDraw, GAIN_RANGE, GAMMA_RANGE, MAX_ROTATION_DEG};
pub use model::{images_to_tensor, SegModelSpec, TinyFpn};
pub use train::{
    infer_batch, infer_seg, seg_batch_loss, train_seg, EpochRecord, SegError, SegExample, SegModel, SegTrainConfig,
    SegTrainOutcome,
};
