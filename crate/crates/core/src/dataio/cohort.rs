use std::collections::BTreeMap;
use std::path::Path;

use super::{load_cmap, load_pgm, CohortManifest, DataError, GrayImage, Result, View};
use crate::label::ConfidenceMap;

/// Frames and first-frame label of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub frames: Vec<GrayImage>,
    pub label: ConfidenceMap,
}

/// Where a video sits in the cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRef {
    pub video_id: String,
    pub patient_id: String,
    pub day_index: u32,
    pub view: View,
    pub zone: u8,
    pub sf: f64,
}

/// A manifest together with the pixel data of every video it lists.
#[derive(Debug, Clone)]
pub struct CohortData {
    pub manifest: CohortManifest,
    videos: BTreeMap<String, VideoData>,
}

impl CohortData {
    pub fn new(manifest: CohortManifest, videos: BTreeMap<String, VideoData>) -> Result<Self> {
        manifest.validate()?;
        for r in video_refs(&manifest) {
            if !videos.contains_key(&r.video_id) {
                return Err(DataError::InvalidManifest(format!("no pixel data for video {}", r.video_id)));
            }
        }
        Ok(Self { manifest, videos })
    }

    /// Reads `cohort.json` and every referenced frame and label under `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = CohortManifest::load(&root.join("cohort.json"))?;
        let mut videos = BTreeMap::new();
        for patient in &manifest.patients {
            for day in &patient.days {
                for v in &day.videos {
                    let frames = v.image_refs.iter().map(|r| load_pgm(&root.join(r))).collect::<Result<Vec<_>>>()?;
                    let label = load_cmap(&root.join(&v.label_ref))?;
                    videos.insert(v.video_id.clone(), VideoData { frames, label });
                }
            }
        }
        Self::new(manifest, videos)
    }

    pub fn video(&self, id: &str) -> Option<&VideoData> {
        self.videos.get(id)
    }

    pub fn refs(&self) -> Vec<VideoRef> {
        video_refs(&self.manifest)
    }
}

/// Every video of the manifest in patient, day, view order.
pub fn video_refs(manifest: &CohortManifest) -> Vec<VideoRef> {
    let mut out = Vec::new();
    for p in &manifest.patients {
        for d in &p.days {
            for v in &d.videos {
                out.push(VideoRef {
                    video_id: v.video_id.clone(),
                    patient_id: p.patient_id.clone(),
                    day_index: d.day_index,
                    view: v.view,
                    zone: v.zone,
                    sf: d.sf_ratio_normalized,
                });
            }
        }
    }
    out
}
