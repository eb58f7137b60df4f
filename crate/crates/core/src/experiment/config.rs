use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::label::ConfidenceThreshold;
use crate::phantom::PhantomSpec;
use crate::segmodel::{SegModelSpec, SegTrainConfig};
use crate::downstream::TaskTrainConfig;

/// Environment variable consulted when the config names no cohort.
pub const DATA_DIR_ENV: &str = "CONFSEG_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Seg,
    SfChange,
    SfRegress,
    Readmission,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Seg, Task::SfChange, Task::SfRegress, Task::Readmission];

    pub fn name(self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::SfChange => "sf_change",
            Task::SfRegress => "sf_regress",
            Task::Readmission => "readmission",
        }
    }

    /// Metrics reported in the wide CSV and the text table, in column order.
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            Task::Seg => &["iou", "weighted_ce", "soft_ce", "trimap_loss"],
            Task::SfChange => &["accuracy_3class", "accuracy_2class", "recall_2class", "precision_2class"],
            Task::SfRegress => &["rmse_avg", "rmse_median", "rmse_max"],
            Task::Readmission => &["accuracy", "recall", "precision"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s.replace('-', "_"))
            .ok_or_else(|| ExperimentError::Config(format!("unknown task {s:?} (seg, sf_change, sf_regress, readmission)")))
    }
}

/// Segmentation channels fed to the video tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegInput {
    /// Probabilities of the frozen segmenter trained at each threshold.
    Model,
    /// Ground-truth labels thresholded at each threshold.
    Oracle,
    /// No segmentation; thresholds are ignored.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairCaps {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for PairCaps {
    fn default() -> Self {
        Self { train: 2000, val: 200, test: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cohort directory holding `cohort.json`; falls back to `$CONFSEG_DATA_DIR`.
    pub cohort: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub task: Task,
    pub thresholds: Vec<ConfidenceThreshold>,
    /// Fold count of the patient split (the held-out test set plus
    /// `folds - 1` cross-validation folds).
    pub folds: usize,
    pub test_patients: usize,
    /// Run only the first `n` validation folds.
    pub max_folds: Option<usize>,
    pub seed: u64,
    pub seg_model: SegModelSpec,
    pub seg_train: SegTrainConfig,
    pub task_train: TaskTrainConfig,
    pub seg_input: SegInput,
    pub pair_caps: PairCaps,
    /// Start readmission encoders from the S/F-change checkpoint of the same run.
    pub warm_start: bool,
    /// Cohort size and geometry for `phantom-gen`.
    pub patients: usize,
    pub phantom: PhantomSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cohort: None,
            out_dir: PathBuf::from("runs/default"),
            task: Task::Seg,
            thresholds: ConfidenceThreshold::ALL.to_vec(),
            folds: 5,
            test_patients: 12,
            max_folds: None,
            seed: 0,
            seg_model: SegModelSpec::default(),
            seg_train: SegTrainConfig::desk(),
            task_train: TaskTrainConfig::default(),
            seg_input: SegInput::Model,
            pair_caps: PairCaps::default(),
            warm_start: true,
            patients: 60,
            phantom: PhantomSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.thresholds.is_empty() {
            return bad("thresholds must not be empty".into());
        }
        let mut seen = self.thresholds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.thresholds.len() {
            return bad("thresholds contain duplicates".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.max_folds == Some(0) {
            return bad("max_folds must be >= 1".into());
        }
        self.seg_model.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.seg_train.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.task_train.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.phantom.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if (self.phantom.width, self.phantom.height) != (self.seg_model.width, self.seg_model.height) {
            return bad("phantom and segmenter resolutions differ".into());
        }
        Ok(())
    }

    /// Cohort directory from the config or the environment.
    pub fn cohort_dir(&self) -> Result<PathBuf, ExperimentError> {
        if let Some(p) = &self.cohort {
            return Ok(p.clone());
        }
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| ExperimentError::Config(format!("no cohort in config and ${DATA_DIR_ENV} is unset")))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Thresholds in grid order.
    pub fn sorted_thresholds(&self) -> Vec<ConfidenceThreshold> {
        let mut t = self.thresholds.clone();
        t.sort();
        t
    }
}

/// Differences from the reference setup, written into every report header.
pub fn declared_deviations(config: &ExperimentConfig) -> Vec<String> {
    let s = &config.seg_model;
    vec![
        format!("resolution: {}x{} phantom frames instead of full-size clinical images", s.width, s.height),
        format!(
            "segmenter: {}-stage pyramid (widths {:?}, lateral {}) trained from scratch, no pretrained backbone",
            s.encoder_widths.len(),
            s.encoder_widths,
            s.lateral_width
        ),
        format!("segmenter lr {} for {} epochs (reference: 1e-4 for 100 epochs)", config.seg_train.lr, config.seg_train.epochs),
        format!(
            "regression head widths {:?} (reference: 256 and 64); video encoder width {}",
            crate::downstream::REGRESS_HIDDEN,
            config.task_train.encoder.feature_width()
        ),
        format!(
            "pair caps train/val/test {}/{}/{} (reference: about 20000 train and 300 validation pairs)",
            config.pair_caps.train, config.pair_caps.val, config.pair_caps.test
        ),
    ]
}
