use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fused::{FusedInput, SegSource};
use super::nets::{EncoderSpec, ReadmissionNet, SfChangeNet, SfRegressNet, ENCODER_PREFIX};
use super::tasks::{aggregate_views, majority_vote, Aggregation, PairExample, PairLabel};
use super::DownstreamError;
use crate::dataio::{CohortData, CohortManifest, View};
use crate::metrics::rmse;
use crate::segmodel::SegModel;
use crate::tensornet::{Adam, LrSchedule, ParamStore, Tape, TensorError, Var};

/// Fused inputs keyed by video id.
pub type VideoBank = BTreeMap<String, FusedInput>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Length of the first warm-restart cycle, in epochs.
    pub restart_epochs: usize,
    pub restart_multiplier: f64,
    /// Box-downsampling factor applied to frames before encoding.
    pub downsample: usize,
    pub encoder: EncoderSpec,
}

impl Default for TaskTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-4,
            lr_min: 0.0,
            batch_size: 8,
            seed: 0,
            restart_epochs: 10,
            restart_multiplier: 2.0,
            downsample: 2,
            encoder: EncoderSpec::default(),
        }
    }
}

impl TaskTrainConfig {
    pub fn validate(&self) -> Result<(), DownstreamError> {
        let bad = |m: &str| Err(DownstreamError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.restart_epochs == 0 {
            return bad("epochs, batch_size and restart_epochs must be >= 1");
        }
        if !(self.lr > 0.0 && (0.0..=self.lr).contains(&self.lr_min)) {
            return bad("need 0 <= lr_min <= lr and lr > 0");
        }
        if self.restart_multiplier < 1.0 {
            return bad("restart_multiplier must be >= 1");
        }
        Ok(())
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> LrSchedule {
        LrSchedule::CosineWarmRestarts {
            lr_max: self.lr,
            lr_min: self.lr_min,
            period: (self.restart_epochs * steps_per_epoch) as u64,
            multiplier: self.restart_multiplier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation score; higher is better.
    pub val_score: f64,
    pub lr: f64,
}

/// A trained network with the weights of its best validation epoch.
#[derive(Debug, Clone)]
pub struct Trained<N> {
    pub net: N,
    pub params: ParamStore<f32>,
    pub best_epoch: usize,
    pub curves: Vec<TaskEpoch>,
}

/// Fuses the listed videos with segmentation channels from `source`.
pub fn fuse_videos<'a>(
    data: &CohortData,
    ids: impl IntoIterator<Item = &'a str>,
    source: SegSource,
    seg_model: Option<&SegModel>,
    downsample: usize,
) -> Result<VideoBank, DownstreamError> {
    let mut bank = VideoBank::new();
    for id in ids {
        if bank.contains_key(id) {
            continue;
        }
        let video = data.video(id).ok_or_else(|| DownstreamError::MissingVideo(id.to_string()))?;
        let fused = match source {
            SegSource::Zero => FusedInput::zero_seg(&video.frames, downsample)?,
            SegSource::Oracle(t) => FusedInput::oracle(&video.frames, &video.label, t, downsample)?,
            SegSource::Model => {
                let model = seg_model.ok_or(DownstreamError::Config("model segmentation needs a segmenter".into()))?;
                let frames: Vec<_> = video.frames.iter().collect();
                let probs = model.predict(&frames).map_err(|e| DownstreamError::Segmenter(e.to_string()))?;
                FusedInput::from_probs(&video.frames, &probs, downsample)?
            }
        };
        bank.insert(id.to_string(), fused);
    }
    Ok(bank)
}

fn fetch<'b>(bank: &'b VideoBank, id: &str) -> Result<&'b FusedInput, DownstreamError> {
    bank.get(id).ok_or_else(|| DownstreamError::MissingVideo(id.to_string()))
}

fn video_var(tape: &mut Tape<f32>, bank: &VideoBank, id: &str) -> Result<Var, DownstreamError> {
    Ok(tape.input(fetch(bank, id)?.to_tensor()?))
}

fn mean_of(tape: &mut Tape<f32>, losses: Vec<Var>) -> Result<Var, TensorError> {
    let n = losses.len();
    let mut it = losses.into_iter();
    let mut total = it.next().ok_or_else(|| TensorError::Shape("empty batch".into()))?;
    for l in it {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / n as f32))
}

/// Seeded mini-batch Adam loop that keeps the best-scoring epoch (earliest on ties).
fn fit<I>(
    config: &TaskTrainConfig,
    params: &mut ParamStore<f32>,
    items: &[I],
    mut batch_loss: impl FnMut(&mut Tape<f32>, &ParamStore<f32>, &[&I]) -> Result<Var, DownstreamError>,
    mut score: impl FnMut(&ParamStore<f32>) -> Result<f64, DownstreamError>,
) -> Result<(usize, Vec<TaskEpoch>), DownstreamError> {
    config.validate()?;
    if items.is_empty() {
        return Err(DownstreamError::EmptySet("train"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let steps_per_epoch = items.len().div_ceil(config.batch_size);
    let schedule = config.schedule(steps_per_epoch);
    let mut adam = Adam::new(params, config.lr);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut curves = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr_at(step);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&I> = chunk.iter().map(|&i| &items[i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, params, &batch)?;
            let value = f64::from(tape.value(loss).item());
            let grads = tape
                .backward(loss, params)
                .map_err(|e| DownstreamError::NonFinite(format!("epoch {epoch}, step {step}: {e}")))?;
            adam.step(params, &grads, schedule.lr_at(step))?;
            loss_sum += value * chunk.len() as f64;
            step += 1;
        }
        let val_score = score(params)?;
        log::debug!("epoch {epoch}: loss {:.5} val {val_score:.4}", loss_sum / items.len() as f64);
        curves.push(TaskEpoch { epoch, train_loss: loss_sum / items.len() as f64, val_score, lr });
        if best.as_ref().is_none_or(|(_, b, _)| val_score > *b) {
            best = Some((epoch, val_score, params.clone()));
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    *params = best_params;
    Ok((best_epoch, curves))
}

// ---- S/F change ----

pub fn predict_sf_change(
    net: &SfChangeNet,
    params: &ParamStore<f32>,
    bank: &VideoBank,
    pairs: &[PairExample],
) -> Result<Vec<PairLabel>, DownstreamError> {
    pairs
        .iter()
        .map(|p| {
            let mut tape = Tape::new();
            let a = video_var(&mut tape, bank, &p.video_a)?;
            let b = video_var(&mut tape, bank, &p.video_b)?;
            let (logits, _) = net.forward(&mut tape, params, a, b)?;
            let row = tape.value(logits).data();
            let best = (0..row.len()).fold(0, |m, i| if row[i] > row[m] { i } else { m });
            Ok(PairLabel::from_index(best).expect("three logits"))
        })
        .collect()
}

fn accuracy<T: PartialEq>(pred: &[T], truth: impl Iterator<Item = T>) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| *p == t).count();
    hits as f64 / pred.len().max(1) as f64
}

/// Trains the change classifier; validation score is 3-class accuracy.
pub fn train_sf_change(
    config: &TaskTrainConfig,
    bank: &VideoBank,
    train: &[PairExample],
    val: &[PairExample],
) -> Result<Trained<SfChangeNet>, DownstreamError> {
    let (net, mut params) = SfChangeNet::init(config.encoder.clone(), config.seed);
    let (best_epoch, curves) = fit(
        config,
        &mut params,
        train,
        |tape, p, batch| {
            let mut losses = Vec::new();
            for pair in batch {
                let a = video_var(tape, bank, &pair.video_a)?;
                let b = video_var(tape, bank, &pair.video_b)?;
                let (logits, _) = net.forward(tape, p, a, b)?;
                losses.push(tape.softmax_ce(logits, &[pair.label.index()])?);
            }
            Ok(mean_of(tape, losses)?)
        },
        |p| Ok(accuracy(&predict_sf_change(&net, p, bank, val)?, val.iter().map(|x| x.label))),
    )?;
    Ok(Trained { net, params, best_epoch, curves })
}

// ---- S/F regression ----

/// One video with its patient-day S/F target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTarget {
    pub video_id: String,
    pub patient_id: String,
    pub day_index: u32,
    pub sf: f64,
}

pub fn video_targets(manifest: &CohortManifest, patients: &[String]) -> Vec<VideoTarget> {
    let mut out = Vec::new();
    for pid in patients {
        let Some(p) = manifest.patient(pid) else { continue };
        for d in &p.days {
            for v in &d.videos {
                out.push(VideoTarget {
                    video_id: v.video_id.clone(),
                    patient_id: pid.clone(),
                    day_index: d.day_index,
                    sf: d.sf_ratio_normalized,
                });
            }
        }
    }
    out
}

pub fn predict_sf(
    net: &SfRegressNet,
    params: &ParamStore<f32>,
    bank: &VideoBank,
    ids: &[&str],
) -> Result<Vec<f64>, DownstreamError> {
    ids.iter()
        .map(|id| {
            let mut tape = Tape::new();
            let x = video_var(&mut tape, bank, id)?;
            let y = net.forward(&mut tape, params, x)?;
            Ok(f64::from(tape.value(y).item()))
        })
        .collect()
}

/// Patient-day predictions after combining the views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub patient_id: String,
    pub day_index: u32,
    pub sf: f64,
    pub view_preds: Vec<f64>,
}

impl DayPrediction {
    pub fn aggregate(&self, mode: Aggregation) -> f64 {
        aggregate_views(&self.view_preds, mode).expect("days have at least one view")
    }
}

pub fn predict_days(
    net: &SfRegressNet,
    params: &ParamStore<f32>,
    bank: &VideoBank,
    targets: &[VideoTarget],
) -> Result<Vec<DayPrediction>, DownstreamError> {
    let ids: Vec<&str> = targets.iter().map(|t| t.video_id.as_str()).collect();
    let preds = predict_sf(net, params, bank, &ids)?;
    let mut days: BTreeMap<(String, u32), DayPrediction> = BTreeMap::new();
    for (t, p) in targets.iter().zip(preds) {
        days.entry((t.patient_id.clone(), t.day_index))
            .or_insert_with(|| DayPrediction {
                patient_id: t.patient_id.clone(),
                day_index: t.day_index,
                sf: t.sf,
                view_preds: Vec::new(),
            })
            .view_preds
            .push(p);
    }
    Ok(days.into_values().collect())
}

/// RMSE of aggregated patient-day predictions.
pub fn day_rmse(days: &[DayPrediction], mode: Aggregation) -> Result<f64, DownstreamError> {
    let preds: Vec<f64> = days.iter().map(|d| d.aggregate(mode)).collect();
    let truth: Vec<f64> = days.iter().map(|d| d.sf).collect();
    Ok(rmse(&preds, &truth)?)
}

/// Trains the per-view regressor with MSE; validation score is the
/// negated RMSE of view-averaged patient-day predictions. The output bias
/// starts at the mean training target.
pub fn train_sf_regress(
    config: &TaskTrainConfig,
    bank: &VideoBank,
    train: &[VideoTarget],
    val: &[VideoTarget],
) -> Result<Trained<SfRegressNet>, DownstreamError> {
    if val.is_empty() {
        return Err(DownstreamError::EmptySet("validation"));
    }
    let (net, mut params) = SfRegressNet::init(config.encoder.clone(), config.seed);
    let mean = train.iter().map(|t| t.sf).sum::<f64>() / train.len().max(1) as f64;
    params.get_mut(net.out.bias).data_mut()[0] = mean as f32;
    let (best_epoch, curves) = fit(
        config,
        &mut params,
        train,
        |tape, p, batch| {
            let mut losses = Vec::new();
            for t in batch {
                let x = video_var(tape, bank, &t.video_id)?;
                let y = net.forward(tape, p, x)?;
                losses.push(tape.mse(y, &[t.sf as f32])?);
            }
            Ok(mean_of(tape, losses)?)
        },
        |p| Ok(-day_rmse(&predict_days(&net, p, bank, val)?, Aggregation::Avg)?),
    )?;
    Ok(Trained { net, params, best_epoch, curves })
}

// ---- readmission ----

/// A patient's six (day one, day two) video pairs and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadmissionCase {
    pub patient_id: String,
    pub readmitted: bool,
    pub views: Vec<(View, String, String)>,
}

pub fn readmission_cases(manifest: &CohortManifest, patients: &[String]) -> Result<Vec<ReadmissionCase>, DownstreamError> {
    patients
        .iter()
        .map(|pid| {
            let p = manifest.patient(pid).ok_or_else(|| DownstreamError::MissingVideo(pid.clone()))?;
            let day = |i: u32| p.days.iter().find(|d| d.day_index == i);
            let (Some(d1), Some(d2)) = (day(0), day(1)) else {
                return Err(DownstreamError::MissingView(format!("{pid}: needs days 0 and 1")));
            };
            let views = View::ALL
                .iter()
                .map(|&v| {
                    let find = |d: &crate::dataio::DayRecord| d.videos.iter().find(|r| r.view == v).map(|r| r.video_id.clone());
                    match (find(d1), find(d2)) {
                        (Some(a), Some(b)) => Ok((v, a, b)),
                        _ => Err(DownstreamError::MissingView(format!("{pid}: view {v}"))),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ReadmissionCase { patient_id: pid.clone(), readmitted: p.readmission_flag, views })
        })
        .collect()
}

/// Vote outcome and the per-view logits behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadmissionPrediction {
    pub readmitted: bool,
    pub view_logits: Vec<[f64; 2]>,
}

pub fn readmission_predict(
    net: &ReadmissionNet,
    params: &ParamStore<f32>,
    bank: &VideoBank,
    case: &ReadmissionCase,
) -> Result<ReadmissionPrediction, DownstreamError> {
    if case.views.len() != View::ALL.len() {
        return Err(DownstreamError::MissingView(format!("{}: {} of 6 views", case.patient_id, case.views.len())));
    }
    let mut view_logits = Vec::with_capacity(6);
    for (view, d1, d2) in &case.views {
        let mut tape = Tape::new();
        let a = video_var(&mut tape, bank, d1)?;
        let b = video_var(&mut tape, bank, d2)?;
        let z = net.forward_view(&mut tape, params, *view, a, b)?;
        let row = tape.value(z).data();
        view_logits.push([f64::from(row[0]), f64::from(row[1])]);
    }
    Ok(ReadmissionPrediction { readmitted: majority_vote(&view_logits)?, view_logits })
}

/// Trains the readmission model; every view head sees its own view of each
/// patient. `warm_start` copies matching encoder weights first.
pub fn train_readmission(
    config: &TaskTrainConfig,
    bank: &VideoBank,
    train: &[ReadmissionCase],
    val: &[ReadmissionCase],
    warm_start: Option<&ParamStore<f32>>,
) -> Result<Trained<ReadmissionNet>, DownstreamError> {
    let (net, mut params) = ReadmissionNet::init(config.encoder.clone(), config.seed);
    if let Some(src) = warm_start {
        let copied = params.load_matching(src, ENCODER_PREFIX);
        log::debug!("warm start copied {copied} encoder tensors");
    }
    let (best_epoch, curves) = fit(
        config,
        &mut params,
        train,
        |tape, p, batch| {
            let mut losses = Vec::new();
            for case in batch {
                for (view, d1, d2) in &case.views {
                    let a = video_var(tape, bank, d1)?;
                    let b = video_var(tape, bank, d2)?;
                    let z = net.forward_view(tape, p, *view, a, b)?;
                    losses.push(tape.softmax_ce(z, &[usize::from(case.readmitted)])?);
                }
            }
            Ok(mean_of(tape, losses)?)
        },
        |p| {
            let preds = val
                .iter()
                .map(|c| Ok(readmission_predict(&net, p, bank, c)?.readmitted))
                .collect::<Result<Vec<bool>, DownstreamError>>()?;
            Ok(accuracy(&preds, val.iter().map(|c| c.readmitted)))
        },
    )?;
    Ok(Trained { net, params, best_epoch, curves })
}
