use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, SegInput, Task};
use super::report::{write_report, write_results, ReportFiles, ResultRow};
use super::ExperimentError;
use crate::dataio::{split_folds, CohortData, FoldSplit};
use crate::downstream::{
    build_pairs, collapse_2class, day_rmse, fuse_videos, predict_days, predict_sf_change, readmission_cases,
    readmission_predict, train_readmission, train_sf_change, train_sf_regress, video_targets, Aggregation, PairLabel,
    ReadmissionNet, Role, SegSource, SfChangeNet, SfRegressNet, TaskEpoch, TwoClass, VideoBank,
};
use crate::label::{compute_weights, threshold_map, Channel, ConfidenceThreshold, CHANNELS};
use crate::metrics::{classification_scores, iou, soft_ce, trimap_loss, weighted_ce, MetricError};
use crate::segmodel::{train_seg, SegExample, SegModel, SegTrainConfig};
use crate::tensornet::{Checkpoint, ParamStore};

/// One (threshold, fold) cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    /// `None` for runs without segmentation input.
    pub threshold: Option<ConfidenceThreshold>,
    pub fold: usize,
}

impl RunKey {
    pub fn threshold_label(&self) -> String {
        self.threshold.map_or_else(|| "none".to_string(), |t| t.level().to_string())
    }

    fn file_stem(&self, task: Task) -> String {
        let t = self.threshold.map_or_else(|| "none".to_string(), |t| format!("{:03}", t.level()));
        format!("{task}_t{t}_f{}", self.fold)
    }
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "threshold {} fold {}", self.threshold_label(), self.fold)
    }
}

/// A loaded cohort with its patient split.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub data: CohortData,
    pub split: FoldSplit,
}

impl RunContext {
    /// Loads the cohort; uses its `folds.json` when present.
    pub fn open(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let dir = config.cohort_dir()?;
        let data = CohortData::load(&dir)?;
        let folds_path = dir.join("folds.json");
        let split = if folds_path.exists() {
            FoldSplit::load(&folds_path)?
        } else {
            split_folds(&data.manifest, config.folds, config.test_patients, config.seed)?
        };
        Ok(Self { config, data, split })
    }

    pub fn from_data(config: ExperimentConfig, data: CohortData) -> Result<Self, ExperimentError> {
        config.validate()?;
        let split = split_folds(&data.manifest, config.folds, config.test_patients, config.seed)?;
        Ok(Self { config, data, split })
    }

    pub fn val_folds(&self) -> Vec<usize> {
        let n = self.split.folds.len();
        (0..self.config.max_folds.map_or(n, |m| m.min(n))).collect()
    }

    fn keys(&self, task: Task) -> Vec<RunKey> {
        let thresholds: Vec<Option<ConfidenceThreshold>> =
            if task != Task::Seg && self.config.seg_input == SegInput::Zero {
                vec![None]
            } else {
                self.config.sorted_thresholds().into_iter().map(Some).collect()
            };
        thresholds
            .into_iter()
            .flat_map(|threshold| self.val_folds().into_iter().map(move |fold| RunKey { threshold, fold }))
            .collect()
    }

    fn out(&self, sub: &str) -> Result<PathBuf, ExperimentError> {
        let dir = self.config.out_dir.join(sub);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn checkpoint_path(&self, task: Task, key: RunKey) -> Result<PathBuf, ExperimentError> {
        Ok(self.out("checkpoints")?.join(format!("{}.ckpt", key.file_stem(task))))
    }

    fn write_log(&self, task: Task, key: RunKey, text: &str) -> Result<(), ExperimentError> {
        let path = self.out("logs")?.join(format!("{}.log", key.file_stem(task)));
        fs::write(path, text)?;
        Ok(())
    }
}

/// First frame and label of every video of `patients`.
pub fn seg_examples(data: &CohortData, patients: &[String]) -> Vec<SegExample> {
    let keep: std::collections::HashSet<&str> = patients.iter().map(String::as_str).collect();
    data.refs()
        .into_iter()
        .filter(|r| keep.contains(r.patient_id.as_str()))
        .filter_map(|r| data.video(&r.video_id))
        .map(|v| SegExample { image: v.frames[0].clone(), label: v.label.clone() })
        .collect()
}

/// Test-set scores of a segmenter; every value is a mean over examples.
#[derive(Debug, Clone, PartialEq)]
pub struct SegScores {
    pub iou: f64,
    pub weighted_ce: f64,
    pub soft_ce: f64,
    /// `None` if no example has a certain pixel.
    pub trimap_loss: Option<f64>,
    /// Mean over examples where the channel's union is nonempty.
    pub channel_iou: [Option<f64>; CHANNELS],
}

pub fn evaluate_segmenter(
    model: &SegModel,
    examples: &[SegExample],
    threshold: ConfidenceThreshold,
) -> Result<SegScores, ExperimentError> {
    if examples.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let images: Vec<_> = examples.iter().map(|e| &e.image).collect();
    let probs = model.predict(&images)?;
    let (mut iou_sum, mut wce, mut sce) = (0.0, 0.0, 0.0);
    let (mut tri_sum, mut tri_n) = (0.0, 0usize);
    let mut ch_sum = [0.0; CHANNELS];
    let mut ch_n = [0usize; CHANNELS];
    for (p, e) in probs.iter().zip(examples) {
        let gt = threshold_map(&e.label, threshold);
        let scores = iou(&p.binarize(0.5), &gt)?;
        iou_sum += scores.macro_iou;
        for (c, v) in scores.per_channel.iter().enumerate() {
            if let Some(v) = v {
                ch_sum[c] += v;
                ch_n[c] += 1;
            }
        }
        let weights = compute_weights(&e.label, threshold, &gt)?;
        wce += weighted_ce(p, &gt, &weights)?;
        sce += soft_ce(p, &e.label)?;
        match trimap_loss(p, &e.label) {
            Ok(v) => {
                tri_sum += v;
                tri_n += 1;
            }
            Err(MetricError::Undefined(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = examples.len() as f64;
    let mut channel_iou = [None; CHANNELS];
    for c in 0..CHANNELS {
        channel_iou[c] = (ch_n[c] > 0).then(|| ch_sum[c] / ch_n[c] as f64);
    }
    Ok(SegScores {
        iou: iou_sum / n,
        weighted_ce: wce / n,
        soft_ce: sce / n,
        trimap_loss: (tri_n > 0).then(|| tri_sum / tri_n as f64),
        channel_iou,
    })
}

fn seg_config(ctx: &RunContext, t: ConfidenceThreshold) -> SegTrainConfig {
    SegTrainConfig { threshold: t, seed: ctx.config.seed, ..ctx.config.seg_train.clone() }
}

fn train_one_seg(ctx: &RunContext, key: RunKey) -> Result<(SegModel, Vec<String>), ExperimentError> {
    let t = key.threshold.expect("segmentation runs have a threshold");
    let train = seg_examples(&ctx.data, &ctx.split.train_patients(key.fold));
    let val = seg_examples(&ctx.data, &ctx.split.val_patients(key.fold));
    let outcome = train_seg(&seg_config(ctx, t), &ctx.config.seg_model, &train, &val)?;
    outcome.checkpoint().save(&ctx.checkpoint_path(Task::Seg, key)?)?;
    let lines = outcome
        .curves
        .iter()
        .map(|r| format!("{},{},{},{},{},{}", key.threshold_label(), key.fold, r.epoch, r.train_loss, r.val_iou, r.lr))
        .collect();
    ctx.write_log(
        Task::Seg,
        key,
        &format!("{key}: best epoch {} of {}\n", outcome.best_epoch, outcome.curves.len()),
    )?;
    Ok((outcome.model, lines))
}

fn load_seg(ctx: &RunContext, key: RunKey) -> Result<SegModel, ExperimentError> {
    let path = ctx.checkpoint_path(Task::Seg, key)?;
    if !path.exists() {
        return Err(ExperimentError::MissingCheckpoint(path.display().to_string()));
    }
    Ok(SegModel::from_checkpoint(ctx.config.seg_model.clone(), &Checkpoint::load(&path)?)?)
}

/// Runs `f` for every key, logging failures and continuing with the rest.
fn for_each_run<T>(
    ctx: &RunContext,
    task: Task,
    phase: &str,
    keys: &[RunKey],
    mut f: impl FnMut(RunKey) -> Result<T, ExperimentError>,
) -> Result<Vec<T>, ExperimentError> {
    let mut out = Vec::new();
    let mut failed = Vec::new();
    for &key in keys {
        log::info!("{phase} {task}: {key}");
        match f(key) {
            Ok(v) => out.push(v),
            Err(e) => {
                log::error!("{phase} {task} {key} failed: {e}");
                let _ = ctx.write_log(task, key, &format!("{key}: FAILED: {e}\n"));
                failed.push(format!("{key}: {e}"));
            }
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(ExperimentError::SubRuns { failed, total: keys.len() })
    }
}

fn write_curves(path: &Path, header: &str, lines: &[String]) -> Result<(), ExperimentError> {
    let mut text = String::from(header);
    text.push('\n');
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Trains one segmenter per (threshold, fold) and saves its checkpoint and curves.
pub fn train_seg_runs(ctx: &RunContext) -> Result<(), ExperimentError> {
    let keys = ctx.keys(Task::Seg);
    let curves = for_each_run(ctx, Task::Seg, "train", &keys, |key| Ok(train_one_seg(ctx, key)?.1))?;
    let lines: Vec<String> = curves.into_iter().flatten().collect();
    write_curves(&ctx.config.out_dir.join("seg_curves.csv"), "threshold,fold,epoch,train_loss,val_iou,lr", &lines)
}

/// Scores every saved segmenter on the held-out test patients.
pub fn eval_seg_runs(ctx: &RunContext) -> Result<Vec<ResultRow>, ExperimentError> {
    let test = seg_examples(&ctx.data, &ctx.split.held_out_test);
    let keys = ctx.keys(Task::Seg);
    let rows = for_each_run(ctx, Task::Seg, "eval", &keys, |key| {
        let t = key.threshold.expect("segmentation runs have a threshold");
        let model = load_seg(ctx, key)?;
        let s = evaluate_segmenter(&model, &test, t)?;
        let row = |metric: &str, value: f64| ResultRow::new(key, metric, value);
        let mut rows = vec![row("iou", s.iou), row("weighted_ce", s.weighted_ce), row("soft_ce", s.soft_ce)];
        rows.extend(s.trimap_loss.map(|v| row("trimap_loss", v)));
        for c in Channel::ALL {
            rows.extend(s.channel_iou[c.index()].map(|v| row(&format!("iou.{}", c.name()), v)));
        }
        Ok(rows)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

fn seg_source(key: RunKey) -> Result<SegSource, ExperimentError> {
    key.threshold.map(SegSource::Oracle).ok_or_else(|| ExperimentError::Config("oracle input needs a threshold".into()))
}

/// Fused inputs for every video of the cohort under the run's segmentation input.
fn task_bank(ctx: &RunContext, key: RunKey, train_missing_seg: bool) -> Result<VideoBank, ExperimentError> {
    let ds = ctx.config.task_train.downsample;
    let refs = ctx.data.refs();
    let ids = refs.iter().map(|r| r.video_id.as_str());
    Ok(match (ctx.config.seg_input, key.threshold) {
        (SegInput::Zero, _) | (_, None) => fuse_videos(&ctx.data, ids, SegSource::Zero, None, ds)?,
        (SegInput::Oracle, _) => fuse_videos(&ctx.data, ids, seg_source(key)?, None, ds)?,
        (SegInput::Model, Some(_)) => {
            let model = match load_seg(ctx, key) {
                Ok(m) => m,
                Err(ExperimentError::MissingCheckpoint(_)) if train_missing_seg => train_one_seg(ctx, key)?.0,
                Err(e) => return Err(e),
            };
            fuse_videos(&ctx.data, ids, SegSource::Model, Some(&model), ds)?
        }
    })
}

fn curve_lines(key: RunKey, curves: &[TaskEpoch]) -> Vec<String> {
    curves
        .iter()
        .map(|c| format!("{},{},{},{},{},{}", key.threshold_label(), key.fold, c.epoch, c.train_loss, c.val_score, c.lr))
        .collect()
}

fn task_config(ctx: &RunContext) -> crate::downstream::TaskTrainConfig {
    crate::downstream::TaskTrainConfig { seed: ctx.config.seed, ..ctx.config.task_train.clone() }
}

fn train_one_task(ctx: &RunContext, task: Task, key: RunKey) -> Result<Vec<String>, ExperimentError> {
    let bank = task_bank(ctx, key, true)?;
    let cfg = task_config(ctx);
    let (m, seed) = (&ctx.data.manifest, ctx.config.seed);
    let train_p = ctx.split.train_patients(key.fold);
    let val_p = ctx.split.val_patients(key.fold);
    let caps = ctx.config.pair_caps;
    let (params, best, curves) = match task {
        Task::SfChange => {
            let tr = build_pairs(m, &train_p, Role::Train, seed, caps.train)?;
            let va = build_pairs(m, &val_p, Role::Val, seed, caps.val)?;
            let t = train_sf_change(&cfg, &bank, &tr, &va)?;
            (t.params, t.best_epoch, t.curves)
        }
        Task::SfRegress => {
            let t = train_sf_regress(&cfg, &bank, &video_targets(m, &train_p), &video_targets(m, &val_p))?;
            (t.params, t.best_epoch, t.curves)
        }
        Task::Readmission => {
            let warm = if ctx.config.warm_start {
                let path = ctx.checkpoint_path(Task::SfChange, key)?;
                if path.exists() {
                    let (_, mut store) = SfChangeNet::init::<f32>(cfg.encoder.clone(), 0);
                    Checkpoint::load(&path)?.restore_into(&mut store)?;
                    Some(store)
                } else {
                    log::warn!("{key}: no S/F-change checkpoint at {}, training readmission cold", path.display());
                    None
                }
            } else {
                None
            };
            let t = train_readmission(&cfg, &bank, &readmission_cases(m, &train_p)?, &readmission_cases(m, &val_p)?, warm.as_ref())?;
            (t.params, t.best_epoch, t.curves)
        }
        Task::Seg => unreachable!("segmentation has its own runner"),
    };
    Checkpoint::new(&params, None).save(&ctx.checkpoint_path(task, key)?)?;
    ctx.write_log(task, key, &format!("{key}: best epoch {best} of {}\n", curves.len()))?;
    Ok(curve_lines(key, &curves))
}

/// Trains the video task for every (threshold, fold), training any missing
/// segmenter on the way when the input is model segmentation.
pub fn train_task_runs(ctx: &RunContext, task: Task) -> Result<(), ExperimentError> {
    if task == Task::Seg {
        return train_seg_runs(ctx);
    }
    let keys = ctx.keys(task);
    let curves = for_each_run(ctx, task, "train", &keys, |key| train_one_task(ctx, task, key))?;
    let lines: Vec<String> = curves.into_iter().flatten().collect();
    write_curves(
        &ctx.config.out_dir.join(format!("{task}_curves.csv")),
        "threshold,fold,epoch,train_loss,val_score,lr",
        &lines,
    )
}

fn load_task_params<N>(ctx: &RunContext, task: Task, key: RunKey, init: (N, ParamStore<f32>)) -> Result<(N, ParamStore<f32>), ExperimentError> {
    let path = ctx.checkpoint_path(task, key)?;
    if !path.exists() {
        return Err(ExperimentError::MissingCheckpoint(path.display().to_string()));
    }
    let (net, mut store) = init;
    Checkpoint::load(&path)?.restore_into(&mut store)?;
    Ok((net, store))
}

fn eval_one_task(ctx: &RunContext, task: Task, key: RunKey) -> Result<Vec<ResultRow>, ExperimentError> {
    let bank = task_bank(ctx, key, false)?;
    let enc = ctx.config.task_train.encoder.clone();
    let m = &ctx.data.manifest;
    let test_p = &ctx.split.held_out_test;
    let row = |metric: &str, value: f64| ResultRow::new(key, metric, value);
    let mut rows = Vec::new();
    match task {
        Task::SfChange => {
            let (net, params) = load_task_params(ctx, task, key, SfChangeNet::init(enc, 0))?;
            let pairs = build_pairs(m, test_p, Role::Test, ctx.config.seed, ctx.config.pair_caps.test)?;
            let preds = predict_sf_change(&net, &params, &bank, &pairs)?;
            let truth: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
            rows.push(row("accuracy_3class", classification_scores(&preds, &truth, &PairLabel::Increase)?.accuracy));
            let p2: Vec<TwoClass> = preds.into_iter().map(collapse_2class).collect();
            let t2: Vec<TwoClass> = truth.into_iter().map(collapse_2class).collect();
            let s = classification_scores(&p2, &t2, &TwoClass::Increase)?;
            rows.push(row("accuracy_2class", s.accuracy));
            rows.extend(s.recall.map(|v| row("recall_2class", v)));
            rows.extend(s.precision.map(|v| row("precision_2class", v)));
        }
        Task::SfRegress => {
            let (net, params) = load_task_params(ctx, task, key, SfRegressNet::init(enc, 0))?;
            let days = predict_days(&net, &params, &bank, &video_targets(m, test_p))?;
            for mode in Aggregation::ALL {
                rows.push(row(&format!("rmse_{}", mode.name()), day_rmse(&days, mode)?));
            }
        }
        Task::Readmission => {
            let (net, params) = load_task_params(ctx, task, key, ReadmissionNet::init(enc, 0))?;
            let cases = readmission_cases(m, test_p)?;
            let preds = cases
                .iter()
                .map(|c| Ok(readmission_predict(&net, &params, &bank, c)?.readmitted))
                .collect::<Result<Vec<bool>, ExperimentError>>()?;
            let truth: Vec<bool> = cases.iter().map(|c| c.readmitted).collect();
            let s = classification_scores(&preds, &truth, &true)?;
            rows.push(row("accuracy", s.accuracy));
            rows.extend(s.recall.map(|v| row("recall", v)));
            rows.extend(s.precision.map(|v| row("precision", v)));
        }
        Task::Seg => unreachable!("segmentation has its own runner"),
    }
    Ok(rows)
}

/// Scores every saved task model on the held-out test patients.
pub fn eval_task_runs(ctx: &RunContext, task: Task) -> Result<Vec<ResultRow>, ExperimentError> {
    if task == Task::Seg {
        return eval_seg_runs(ctx);
    }
    let keys = ctx.keys(task);
    Ok(for_each_run(ctx, task, "eval", &keys, |key| eval_one_task(ctx, task, key))?.into_iter().flatten().collect())
}

/// Train, evaluate and report `ctx.config.task`.
pub fn run(ctx: &RunContext) -> Result<ReportFiles, ExperimentError> {
    let task = ctx.config.task;
    fs::create_dir_all(&ctx.config.out_dir)?;
    if task == Task::Readmission && ctx.config.warm_start {
        train_task_runs(ctx, Task::SfChange)?;
    }
    train_task_runs(ctx, task)?;
    let rows = eval_task_runs(ctx, task)?;
    write_results(&ctx.config.out_dir, task, &rows)?;
    write_report(&ctx.config, task)
}
