use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::augment::{AugmentConfig, AugmentDraw};
use super::model::{images_to_tensor, SegModelSpec, TinyFpn};
use crate::dataio::GrayImage;
use crate::label::{compute_weights, threshold_map, BinaryMaskStack, ConfidenceMap, ConfidenceThreshold, LabelError};
use crate::metrics::{iou, MetricError, ProbMap};
use crate::tensornet::{Adam, Checkpoint, LrSchedule, ParamStore, Tape, TensorError};

const INFER_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("example {index} has dimensions {found:?}, model expects {expected:?}")]
    DimensionMismatch { index: usize, found: (usize, usize), expected: (usize, usize) },
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite { epoch: usize, step: usize, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One labelled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SegExample {
    pub image: GrayImage,
    pub label: ConfidenceMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub threshold: ConfidenceThreshold,
    pub epochs: usize,
    pub lr: f64,
    /// Floor of the cosine schedule, reached at the end of training.
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Confidence-weighted loss; `false` trains with unit weights.
    pub weighted: bool,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            threshold: ConfidenceThreshold::new(60).expect("60 is on the grid"),
            epochs: 100,
            lr: 1e-4,
            lr_min: 0.0,
            batch_size: 8,
            seed: 0,
            augment: AugmentConfig::default(),
            weighted: true,
        }
    }
}

impl SegTrainConfig {
    /// Settings that train the 64x64 phantom segmenter from scratch in 30 epochs.
    pub fn desk() -> Self {
        Self { epochs: 30, lr: 3e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SegError> {
        if self.epochs == 0 {
            return Err(SegError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SegError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(SegError::Config("need 0 <= lr_min <= lr and lr > 0".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> LrSchedule {
        LrSchedule::Cosine { lr_max: self.lr, lr_min: self.lr_min, period: (self.epochs * steps_per_epoch) as u64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_iou: f64,
    pub lr: f64,
}

/// A segmenter together with its weights.
#[derive(Debug, Clone)]
pub struct SegModel {
    pub net: TinyFpn,
    pub params: ParamStore<f32>,
}

impl SegModel {
    pub fn init(spec: SegModelSpec, seed: u64) -> Result<Self, TensorError> {
        let (net, params) = TinyFpn::init(spec, seed)?;
        Ok(Self { net, params })
    }

    pub fn from_checkpoint(spec: SegModelSpec, checkpoint: &Checkpoint) -> Result<Self, TensorError> {
        let mut model = Self::init(spec, 0)?;
        checkpoint.restore_into(&mut model.params)?;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.params, None)
    }

    pub fn predict(&self, images: &[&GrayImage]) -> Result<Vec<ProbMap>, SegError> {
        infer_batch(&self.net, &self.params, images)
    }
}

#[derive(Debug, Clone)]
pub struct SegTrainOutcome {
    /// Weights from the epoch with the best validation IoU.
    pub model: SegModel,
    pub best_epoch: usize,
    pub curves: Vec<EpochRecord>,
}

impl SegTrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        self.model.checkpoint()
    }
}

/// Mean weighted BCE of a batch at `threshold`; unit weights when `weighted` is false.
pub fn seg_batch_loss(
    tape: &mut Tape<f32>,
    net: &TinyFpn,
    params: &ParamStore<f32>,
    batch: &[(GrayImage, ConfidenceMap)],
    threshold: ConfidenceThreshold,
    weighted: bool,
) -> Result<crate::tensornet::Var, SegError> {
    let images: Vec<&GrayImage> = batch.iter().map(|(i, _)| i).collect();
    let x = tape.input(images_to_tensor(&images)?);
    let logits = net.forward(tape, params, x)?;
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (_, label) in batch {
        let mask = threshold_map(label, threshold);
        targets.extend(mask.bits().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        if weighted {
            let wm = compute_weights(label, threshold, &mask)?;
            weights.extend(wm.values().iter().map(|&w| w as f32));
        }
    }
    let w = weighted.then_some(weights.as_slice());
    Ok(tape.bce_with_logits(logits, &targets, w)?)
}

/// Trains a segmenter at `config.threshold` and keeps the epoch with the
/// highest mean per-example macro IoU on `val` (earliest epoch on ties).
pub fn train_seg(
    config: &SegTrainConfig,
    spec: &SegModelSpec,
    train: &[SegExample],
    val: &[SegExample],
) -> Result<SegTrainOutcome, SegError> {
    config.validate()?;
    check_set("train", train, spec)?;
    check_set("validation", val, spec)?;

    let mut model = SegModel::init(spec.clone(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let schedule = config.schedule(steps_per_epoch);
    let mut adam = Adam::new(&model.params, config.lr);
    let val_targets: Vec<BinaryMaskStack> = val.iter().map(|e| threshold_map(&e.label, config.threshold)).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let lr = schedule.lr_at(step);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(GrayImage, ConfidenceMap)> = chunk
                .iter()
                .map(|&i| AugmentDraw::sample(&config.augment, &mut rng).apply(&train[i].image, &train[i].label))
                .collect();
            let mut tape = Tape::new();
            let loss = seg_batch_loss(&mut tape, &model.net, &model.params, &batch, config.threshold, config.weighted)?;
            let value = f64::from(tape.value(loss).item());
            let grads = tape.backward(loss, &model.params).map_err(|e| SegError::NonFinite {
                epoch,
                step: batch_no,
                detail: e.to_string(),
            })?;
            adam.step(&mut model.params, &grads, schedule.lr_at(step))?;
            loss_sum += value * chunk.len() as f64;
            step += 1;
        }
        let images: Vec<&GrayImage> = val.iter().map(|e| &e.image).collect();
        let probs = model.predict(&images)?;
        let mut iou_sum = 0.0;
        for (p, gt) in probs.iter().zip(&val_targets) {
            iou_sum += iou(&p.binarize(0.5), gt)?.macro_iou;
        }
        let val_iou = iou_sum / val.len() as f64;
        log::debug!("epoch {epoch}: loss {:.5} val iou {val_iou:.4}", loss_sum / train.len() as f64);
        curves.push(EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_iou, lr });
        if best.as_ref().is_none_or(|(_, b, _)| val_iou > *b) {
            best = Some((epoch, val_iou, model.params.clone()));
        }
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    Ok(SegTrainOutcome { model: SegModel { net: model.net, params }, best_epoch, curves })
}

fn check_set(name: &'static str, set: &[SegExample], spec: &SegModelSpec) -> Result<(), SegError> {
    if set.is_empty() {
        return Err(SegError::EmptySet(name));
    }
    let expected = (spec.width, spec.height);
    for (index, e) in set.iter().enumerate() {
        for found in [e.image.dims(), e.label.dims()] {
            if found != expected {
                return Err(SegError::DimensionMismatch { index, found, expected });
            }
        }
    }
    Ok(())
}

/// Per-channel probabilities for a batch of images.
pub fn infer_batch(net: &TinyFpn, params: &ParamStore<f32>, images: &[&GrayImage]) -> Result<Vec<ProbMap>, SegError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_CHUNK) {
        let mut tape = Tape::new();
        let x = tape.input(images_to_tensor(chunk)?);
        let logits = net.forward(&mut tape, params, x)?;
        let data = tape.value(logits).data();
        let per = data.len() / chunk.len();
        let (w, h) = (net.spec.width, net.spec.height);
        for sample in data.chunks(per) {
            let probs = sample.iter().map(|&z| 1.0 / (1.0 + (-f64::from(z)).exp())).collect();
            out.push(ProbMap::new(w, h, probs)?);
        }
    }
    Ok(out)
}

/// Probabilities and the binary mask at the 0.5 cut for one image.
pub fn infer_seg(model: &SegModel, image: &GrayImage) -> Result<(ProbMap, BinaryMaskStack), SegError> {
    let expected = (model.net.spec.width, model.net.spec.height);
    if image.dims() != expected {
        return Err(SegError::DimensionMismatch { index: 0, found: image.dims(), expected });
    }
    let probs = infer_batch(&model.net, &model.params, &[image])?.remove(0);
    let mask = probs.binarize(0.5);
    Ok((probs, mask))
}
