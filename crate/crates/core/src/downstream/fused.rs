use serde::{Deserialize, Serialize};

use super::DownstreamError;
use crate::dataio::GrayImage;
use crate::label::{threshold_map, ConfidenceMap, ConfidenceThreshold, CHANNELS};
use crate::metrics::ProbMap;
use crate::tensornet::{Tensor, TensorError};

/// Greyscale plus six segmentation channels.
pub const FUSED_CHANNELS: usize = 1 + CHANNELS;

/// Where the segmentation channels of a fused input come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "threshold")]
pub enum SegSource {
    /// All segmentation channels zero.
    Zero,
    /// The first-frame label thresholded at the given level, on every frame.
    Oracle(ConfidenceThreshold),
    /// Probabilities of a frozen segmenter, frame by frame.
    Model,
}

/// A video as `[T, 7, S, S]` values in `[0, 1]`, box-downsampled from the
/// source resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedInput {
    frames: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FusedInput {
    /// `seg` holds one `6*H*W` plane stack per frame at source resolution.
    pub fn new(frames: &[GrayImage], seg: &[Vec<f64>], downsample: usize) -> Result<Self, DownstreamError> {
        let first = frames.first().ok_or(DownstreamError::EmptyVideo)?;
        let (w, h) = first.dims();
        if downsample == 0 || w % downsample != 0 || h % downsample != 0 {
            return Err(DownstreamError::Shape(format!("{w}x{h} frames are not divisible by {downsample}")));
        }
        if seg.len() != frames.len() {
            return Err(DownstreamError::Shape(format!("{} frames but {} segmentations", frames.len(), seg.len())));
        }
        let (ow, oh) = (w / downsample, h / downsample);
        let mut data = Vec::with_capacity(frames.len() * FUSED_CHANNELS * ow * oh);
        for (frame, planes) in frames.iter().zip(seg) {
            if frame.dims() != (w, h) || planes.len() != CHANNELS * w * h {
                return Err(DownstreamError::Shape("frame or segmentation size differs within a video".into()));
            }
            let grey: Vec<f64> = frame.pixels().iter().map(|&p| f64::from(p) / 255.0).collect();
            box_down(&grey, w, h, downsample, &mut data);
            for c in 0..CHANNELS {
                box_down(&planes[c * w * h..(c + 1) * w * h], w, h, downsample, &mut data);
            }
        }
        Ok(Self { frames: frames.len(), width: ow, height: oh, data })
    }

    pub fn zero_seg(frames: &[GrayImage], downsample: usize) -> Result<Self, DownstreamError> {
        let n = frames.first().map_or(0, |f| f.pixels().len());
        Self::new(frames, &vec![vec![0.0; CHANNELS * n]; frames.len()], downsample)
    }

    pub fn oracle(frames: &[GrayImage], label: &ConfidenceMap, t: ConfidenceThreshold, downsample: usize) -> Result<Self, DownstreamError> {
        let plane: Vec<f64> = threshold_map(label, t).bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(frames, &vec![plane; frames.len()], downsample)
    }

    pub fn from_probs(frames: &[GrayImage], probs: &[ProbMap], downsample: usize) -> Result<Self, DownstreamError> {
        let seg: Vec<Vec<f64>> = probs.iter().map(|p| p.values().to_vec()).collect();
        Self::new(frames, &seg, downsample)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Result<Tensor<f32>, TensorError> {
        Tensor::from_vec(&[self.frames, FUSED_CHANNELS, self.height, self.width], self.data.clone())
    }
}

fn box_down(src: &[f64], w: usize, h: usize, f: usize, out: &mut Vec<f32>) {
    let norm = (f * f) as f64;
    for y in (0..h).step_by(f) {
        for x in (0..w).step_by(f) {
            let mut s = 0.0;
            for dy in 0..f {
                let row = (y + dy) * w;
                s += src[row + x..row + x + f].iter().sum::<f64>();
            }
            out.push((s / norm) as f32);
        }
    }
}
