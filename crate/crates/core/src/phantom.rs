//! Deterministic synthetic lung-ultrasound cohort.
//!
//! Each frame shows a chest-wall fascia band, a pleural line (partly sharp,
//! partly fuzzy), horizontal A-line reverberations, a faint sub-A line and
//! `k` vertical B-line streaks under multiplicative speckle. Labels mark
//! structure cores at 100% and decay through 80/60/40/20% over the falloff
//! width.
//!
//! A patient-day's B-line burden `k` drives its S/F ratio and, on day two,
//! the readmission probability; those coefficients are written to the
//! manifest so downstream results can be checked against the planted link.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    save_cmap, save_pgm, CohortData, CohortManifest, DataError, DayRecord, GrayImage, PatientRecord, PlantedDay,
    PlantedLinkRecord, VideoData, VideoRecord, View,
};
use crate::label::{Channel, ConfidenceMap};

pub const MAX_B_LINES: u8 = 6;
pub const DAYS: u32 = 2;
pub const MIN_PATIENTS: usize = 6;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("image {0}x{1} too small for the phantom structures (need at least 24x32)")]
    TooSmall(usize, usize),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {MIN_PATIENTS} patients, got {0}")]
    TooFewPatients(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Inclusive range of the mean pleural depth as a fraction of height.
    pub pleura_depth: (f64, f64),
    pub a_line_count: (usize, usize),
    pub b_line_count: (u8, u8),
    /// Standard deviation of the multiplicative speckle.
    pub speckle: f64,
    /// Pixels over which confidence falls from 100% to 20%.
    pub falloff: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 8,
            pleura_depth: (0.25, 0.36),
            a_line_count: (1, 2),
            b_line_count: (0, MAX_B_LINES),
            speckle: 0.3,
            falloff: 4,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.width < 24 || self.height < 32 {
            return Err(PhantomError::TooSmall(self.width, self.height));
        }
        let bad = |m: &str| Err(PhantomError::InvalidSpec(m.into()));
        if self.frames == 0 {
            return bad("frames must be >= 1");
        }
        let (lo, hi) = self.pleura_depth;
        if !(0.1..=0.45).contains(&lo) || hi < lo || hi > 0.45 {
            return bad("pleura_depth must satisfy 0.1 <= lo <= hi <= 0.45");
        }
        if self.a_line_count.0 > self.a_line_count.1 {
            return bad("a_line_count range is empty");
        }
        if self.b_line_count.0 > self.b_line_count.1 || self.b_line_count.1 > MAX_B_LINES {
            return bad("b_line_count must be a nonempty range within 0..=6");
        }
        if self.falloff == 0 || !(0.0..1.0).contains(&self.speckle) {
            return bad("falloff must be >= 1 and speckle in [0, 1)");
        }
        Ok(())
    }
}

/// The planted burden-to-outcome coefficients.
pub const PLANTED_LINK: PlantedLinkRecord = PlantedLinkRecord {
    sf_intercept: 0.95,
    sf_slope: -0.10,
    sf_noise_std: 0.03,
    sf_min: 0.05,
    sf_max: 1.0,
    readmit_base: 0.15,
    readmit_slope: 0.10,
};

/// Sampled geometry of one scene; frames of a video re-render it with jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    width: usize,
    height: usize,
    pleura_depth: f64,
    pleura_amp: f64,
    pleura_phase: f64,
    /// Columns left of this are sharp pleura if `sharp_left`, fuzzy otherwise.
    pleura_split: usize,
    sharp_left: bool,
    fascia_depth: f64,
    fascia_slope: f64,
    a_lines: Vec<f64>,
    sub_a: Option<(f64, usize, usize)>,
    b_lines: Vec<f64>,
    /// Overall probe gain applied to every frame of the scene.
    gain: f64,
}

impl Scene {
    pub fn sample<R: Rng>(spec: &PhantomSpec, b_lines: u8, rng: &mut R) -> Self {
        let (w, h) = (spec.width, spec.height);
        let hf = h as f64;
        let pleura_depth = rng.random_range(spec.pleura_depth.0..=spec.pleura_depth.1) * hf;
        let fascia_depth = pleura_depth - rng.random_range(0.10..0.15) * hf;
        let n_a = rng.random_range(spec.a_line_count.0..=spec.a_line_count.1);
        let a_lines: Vec<f64> = (2..2 + n_a)
            .map(|m| pleura_depth * m as f64)
            .filter(|&y| y < hf - 2.0)
            .collect();
        let sub_a = {
            let y = pleura_depth * 1.5;
            let len = rng.random_range(w / 3..=w / 2);
            let x0 = rng.random_range(0..=w - len);
            (y < hf - 2.0).then_some((y, x0, x0 + len))
        };
        Self {
            width: w,
            height: h,
            pleura_depth,
            pleura_amp: rng.random_range(0.0..1.5),
            pleura_phase: rng.random_range(0.0..std::f64::consts::TAU),
            pleura_split: rng.random_range(w / 4..=3 * w / 4),
            sharp_left: rng.random_bool(0.5),
            fascia_depth,
            fascia_slope: rng.random_range(-0.05..0.05),
            a_lines,
            sub_a,
            b_lines: place_b_lines(w, b_lines, rng),
            gain: rng.random_range(0.7..1.3),
        }
    }

    pub fn b_line_count(&self) -> usize {
        self.b_lines.len()
    }

    fn pleura_y(&self, x: f64) -> f64 {
        self.pleura_depth + self.pleura_amp * (std::f64::consts::TAU * x / self.width as f64 + self.pleura_phase).sin()
    }

    fn is_sharp(&self, x: usize) -> bool {
        (x < self.pleura_split) == self.sharp_left
    }

    /// Renders the scene shifted by `(dx, dy)` pixels.
    pub fn render<R: Rng>(&self, spec: &PhantomSpec, dx: f64, dy: f64, rng: &mut R) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let speckle = Normal::new(1.0, spec.speckle).expect("valid std");
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (xs, ys) = (x as f64 - dx, y as f64 - dy);
                let py = self.pleura_y(xs);
                let depth_fade = 1.0 - 0.35 * ys / h as f64;
                let mut v = if ys < py { 62.0 } else { 30.0 * depth_fade };
                let fy = self.fascia_depth + self.fascia_slope * (xs - w as f64 / 2.0);
                v += 55.0 * bump(ys - fy, 1.2);
                let xi = xs.round().clamp(0.0, (w - 1) as f64) as usize;
                v += if self.is_sharp(xi) { 150.0 * bump(ys - py, 0.7) } else { 105.0 * bump(ys - py, 1.8) };
                for &ay in &self.a_lines {
                    v += 70.0 * depth_fade * bump(ys - ay, 0.8);
                }
                if let Some((sy, x0, x1)) = self.sub_a {
                    if xs >= x0 as f64 && xs < x1 as f64 {
                        v += 38.0 * depth_fade * bump(ys - sy, 0.8);
                    }
                }
                if ys > py {
                    for &bx in &self.b_lines {
                        v += 35.0 * (1.0 - 0.3 * (ys - py) / h as f64) * bump(xs - bx, 1.0);
                    }
                }
                let noisy = self.gain * v * speckle.sample(rng).max(0.0);
                pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage::new(w, h, pixels).expect("dims match")
    }

    /// Confidence label of the unshifted scene.
    pub fn label(&self, spec: &PhantomSpec) -> ConfidenceMap {
        let (w, h) = (self.width, self.height);
        let mut cores: Vec<Vec<bool>> = vec![vec![false; w * h]; 6];
        let mut mark = |c: Channel, x: usize, y: isize| {
            if y >= 0 && (y as usize) < h {
                cores[c.index()][y as usize * w + x] = true;
            }
        };
        for x in 0..w {
            let py = self.pleura_y(x as f64).round() as isize;
            if self.is_sharp(x) {
                mark(Channel::SharpPleura, x, py);
            } else {
                for d in -1..=1 {
                    mark(Channel::FuzzyPleura, x, py + d);
                }
            }
            let fy = (self.fascia_depth + self.fascia_slope * (x as f64 - w as f64 / 2.0)).round() as isize;
            mark(Channel::FasciaBand, x, fy);
            mark(Channel::FasciaBand, x, fy + 1);
            for &ay in &self.a_lines {
                mark(Channel::ALine, x, ay.round() as isize);
            }
            if let Some((sy, x0, x1)) = self.sub_a {
                if (x0..x1).contains(&x) {
                    mark(Channel::SubALine, x, sy.round() as isize);
                }
            }
        }
        for &bx in &self.b_lines {
            let bx_lo = bx.floor() as usize;
            for x in bx_lo..=(bx_lo + 1).min(w - 1) {
                let top = self.pleura_y(x as f64).round() as isize + 2;
                for y in top..h as isize {
                    mark(Channel::VerticalLine, x, y);
                }
            }
        }
        let mut map = ConfidenceMap::zeros(w, h).expect("nonzero dims");
        for c in Channel::ALL {
            stamp_falloff(&mut map, c, &cores[c.index()], w, h, spec.falloff);
        }
        map
    }
}

fn bump(d: f64, sigma: f64) -> f64 {
    (-0.5 * (d / sigma).powi(2)).exp()
}

fn place_b_lines<R: Rng>(width: usize, count: u8, rng: &mut R) -> Vec<f64> {
    // evenly spaced slots with jitter keep streaks separated
    let n = count as usize;
    if n == 0 {
        return Vec::new();
    }
    let margin = 3.0;
    let slot = (width as f64 - 2.0 * margin) / n as f64;
    (0..n)
        .map(|i| margin + slot * i as f64 + rng.random_range(0.25..0.75) * slot)
        .map(|x: f64| x.clamp(1.0, width as f64 - 3.0))
        .collect()
}

/// Quantized confidence for a pixel `d` pixels from the nearest core.
pub fn falloff_level(d: f64, falloff: usize) -> u8 {
    const LEVELS: [u8; 4] = [80, 60, 40, 20];
    if d <= 0.0 {
        return 100;
    }
    let band = ((d / falloff as f64) * 4.0).ceil() as usize;
    if band == 0 {
        100
    } else {
        LEVELS.get(band - 1).copied().unwrap_or(0)
    }
}

fn stamp_falloff(map: &mut ConfidenceMap, c: Channel, core: &[bool], w: usize, h: usize, falloff: usize) {
    let r = falloff as isize;
    for (i, _) in core.iter().enumerate().filter(|(_, &on)| on) {
        let (cx, cy) = ((i % w) as isize, (i / w) as isize);
        for oy in -r..=r {
            for ox in -r..=r {
                let (x, y) = (cx + ox, cy + oy);
                if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                    continue;
                }
                let d = ((ox * ox + oy * oy) as f64).sqrt();
                let level = falloff_level(d, falloff);
                if level > 0 {
                    map.raise(c, x as usize, y as usize, level);
                }
            }
        }
    }
}

/// One labelled frame with a random B-line count drawn from the spec's range.
pub fn gen_image(seed: u64, spec: &PhantomSpec) -> Result<(GrayImage, ConfidenceMap), PhantomError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(spec.b_line_count.0..=spec.b_line_count.1);
    Ok(gen_image_with_burden(&mut rng, spec, k))
}

pub fn gen_image_with_burden<R: Rng>(rng: &mut R, spec: &PhantomSpec, b_lines: u8) -> (GrayImage, ConfidenceMap) {
    let scene = Scene::sample(spec, b_lines, rng);
    let image = scene.render(spec, 0.0, 0.0, rng);
    (image, scene.label(spec))
}

/// Frames and first-frame label of one generated video.
#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub record: VideoRecord,
    pub frames: Vec<GrayImage>,
    pub label: ConfidenceMap,
}

#[derive(Debug, Clone)]
pub struct GeneratedPatient {
    pub record: PatientRecord,
    pub videos: Vec<GeneratedVideo>,
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:03}")
}

/// Generates one patient from its own stream of the cohort seed.
pub fn gen_patient(seed: u64, index: usize, spec: &PhantomSpec) -> GeneratedPatient {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let link = PLANTED_LINK;
    let noise = Normal::new(0.0, link.sf_noise_std).expect("valid std");
    let pid = patient_id(index);
    let lo = spec.b_line_count.0;
    let hi = spec.b_line_count.1;

    let mut days = Vec::new();
    let mut videos = Vec::new();
    let mut last_burden = 0;
    for day in 0..DAYS {
        let burden: u8 = rng.random_range(lo..=hi);
        let eta = noise.sample(&mut rng);
        let sf = link.sf(burden, eta);
        last_burden = burden;
        let mut day_videos = Vec::new();
        for view in View::ALL {
            let k = (i16::from(burden) + rng.random_range(-1i16..=1)).clamp(i16::from(lo), i16::from(hi)) as u8;
            let scene = Scene::sample(spec, k, &mut rng);
            let frames: Vec<GrayImage> = (0..spec.frames)
                .map(|f| {
                    let (dx, dy) = if f == 0 {
                        (0.0, 0.0)
                    } else {
                        (rng.random_range(-1.0..=1.0), rng.random_range(-0.6..=0.6))
                    };
                    scene.render(spec, dx, dy, &mut rng)
                })
                .collect();
            let vid = format!("{pid}_d{day}_{view}");
            let record = VideoRecord {
                video_id: vid.clone(),
                view,
                zone: view.zone(),
                frame_count: frames.len(),
                image_refs: (0..frames.len()).map(|f| format!("frames/{vid}_f{f:02}.pgm")).collect(),
                label_ref: format!("labels/{vid}.cmap"),
                b_line_count: Some(k),
            };
            day_videos.push(record.clone());
            videos.push(GeneratedVideo { record, frames, label: scene.label(spec) });
        }
        days.push(DayRecord {
            day_index: day,
            sf_ratio_normalized: sf,
            videos: day_videos,
            planted: Some(PlantedDay { b_line_burden: burden, sf_noise: eta }),
        });
    }
    let readmitted = rng.random_bool(link.readmit_probability(last_burden));
    GeneratedPatient {
        record: PatientRecord { patient_id: pid, readmission_flag: readmitted, days },
        videos,
    }
}

/// Generates `n_patients` in memory (in parallel; output order is by index).
pub fn gen_cohort_in_memory(seed: u64, n_patients: usize, spec: &PhantomSpec) -> Result<Vec<GeneratedPatient>, PhantomError> {
    spec.validate()?;
    if n_patients < MIN_PATIENTS {
        return Err(PhantomError::TooFewPatients(n_patients));
    }
    Ok((0..n_patients).into_par_iter().map(|i| gen_patient(seed, i, spec)).collect())
}

pub fn manifest_for(seed: u64, patients: &[GeneratedPatient]) -> CohortManifest {
    CohortManifest {
        patients: patients.iter().map(|p| p.record.clone()).collect(),
        planted_link: Some(PLANTED_LINK),
        seed: Some(seed),
    }
}

/// In-memory cohort with pixel data, without touching the filesystem.
pub fn gen_cohort_data(seed: u64, n_patients: usize, spec: &PhantomSpec) -> Result<CohortData, PhantomError> {
    let patients = gen_cohort_in_memory(seed, n_patients, spec)?;
    let manifest = manifest_for(seed, &patients);
    let videos = patients
        .into_iter()
        .flat_map(|p| p.videos)
        .map(|v| (v.record.video_id, VideoData { frames: v.frames, label: v.label }))
        .collect();
    Ok(CohortData::new(manifest, videos)?)
}

/// Generates a cohort and writes frames, labels and `cohort.json` under `out_dir`.
pub fn gen_cohort(seed: u64, n_patients: usize, spec: &PhantomSpec, out_dir: &Path) -> Result<CohortManifest, PhantomError> {
    let patients = gen_cohort_in_memory(seed, n_patients, spec)?;
    std::fs::create_dir_all(out_dir.join("frames"))?;
    std::fs::create_dir_all(out_dir.join("labels"))?;
    patients.par_iter().try_for_each(|p| -> Result<(), DataError> {
        for v in &p.videos {
            for (frame, rel) in v.frames.iter().zip(&v.record.image_refs) {
                save_pgm(frame, &out_dir.join(rel))?;
            }
            save_cmap(&v.label, &out_dir.join(&v.record.label_ref))?;
        }
        Ok(())
    })?;
    let manifest = manifest_for(seed, &patients);
    manifest.save(&out_dir.join("cohort.json"))?;
    Ok(manifest)
}
