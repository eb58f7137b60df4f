use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{file_err, DataError, Result};

/// Probe placement. Zone is a function of the view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    R1,
    L1,
    R2,
    L2,
    R3,
    L3,
}

impl View {
    pub const ALL: [View; 6] = [View::R1, View::L1, View::R2, View::L2, View::R3, View::L3];

    pub fn zone(self) -> u8 {
        match self {
            View::R1 | View::L1 => 1,
            View::R2 | View::L2 => 2,
            View::R3 | View::L3 => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub view: View,
    pub zone: u8,
    pub frame_count: usize,
    /// Frame PGMs, relative to the manifest directory.
    pub image_refs: Vec<String>,
    /// `.cmap` label of the first frame, relative to the manifest directory.
    pub label_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_line_count: Option<u8>,
}

/// Generator-side ground truth for one patient-day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedDay {
    pub b_line_burden: u8,
    pub sf_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day_index: u32,
    pub sf_ratio_normalized: f64,
    pub videos: Vec<VideoRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedDay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub readmission_flag: bool,
    pub days: Vec<DayRecord>,
}

/// Coefficients of the synthetic burden-to-outcome link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLinkRecord {
    pub sf_intercept: f64,
    pub sf_slope: f64,
    pub sf_noise_std: f64,
    pub sf_min: f64,
    pub sf_max: f64,
    pub readmit_base: f64,
    pub readmit_slope: f64,
}

impl PlantedLinkRecord {
    pub fn sf(&self, burden: u8, noise: f64) -> f64 {
        (self.sf_intercept + self.sf_slope * f64::from(burden) + noise).clamp(self.sf_min, self.sf_max)
    }

    pub fn readmit_probability(&self, burden_day2: u8) -> f64 {
        (self.readmit_base + self.readmit_slope * f64::from(burden_day2)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub patients: Vec<PatientRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_link: Option<PlantedLinkRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DataError::InvalidManifest(msg));
        let mut patients = HashSet::new();
        let mut videos = HashSet::new();
        for p in &self.patients {
            if !patients.insert(p.patient_id.as_str()) {
                return bad(format!("duplicate patient id {}", p.patient_id));
            }
            if p.days.len() < 2 {
                return bad(format!("patient {} has {} recorded days (need >= 2)", p.patient_id, p.days.len()));
            }
            for d in &p.days {
                if !(0.0..=1.0).contains(&d.sf_ratio_normalized) {
                    return bad(format!(
                        "patient {} day {}: sf {} outside [0, 1]",
                        p.patient_id, d.day_index, d.sf_ratio_normalized
                    ));
                }
                for v in &d.videos {
                    if v.zone != v.view.zone() {
                        return bad(format!("video {}: zone {} does not match view {}", v.video_id, v.zone, v.view));
                    }
                    if v.image_refs.len() != v.frame_count || v.frame_count == 0 {
                        return bad(format!("video {}: frame_count {} vs {} refs", v.video_id, v.frame_count, v.image_refs.len()));
                    }
                    if !videos.insert(v.video_id.as_str()) {
                        return bad(format!("duplicate video id {}", v.video_id));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    pub fn video_count(&self) -> usize {
        self.patients.iter().flat_map(|p| &p.days).map(|d| d.videos.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_json()?).map_err(file_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        Self::from_json(&text)
    }
}
