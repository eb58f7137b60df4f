//! Confidence labels and the threshold / weight / trimap transforms applied to them.
//!
//! A [`ConfidenceMap`] stores, for each of six feature planes, an integer
//! percent (0..=100) per pixel: the annotator's certainty that the pixel shows
//! the feature. Training targets are derived from it by thresholding
//! ([`threshold_map`]), and each target pixel gets a loss weight from
//! [`compute_weights`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of feature planes in every label raster.
pub const CHANNELS: usize = 6;

/// Background weight used by the 0% and 100% models.
pub const FIXED_BACKGROUND_WEIGHT: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("confidence value {0} out of range (max 100)")]
    ValueOutOfRange(u8),
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("payload has {got} values, expected {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("{0}% is not one of the supported thresholds (0, 20, 40, 50, 60, 80, 100)")]
    UnsupportedThreshold(u8),
    #[error("channel index {0} out of range (0..6)")]
    BadChannel(usize),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

/// Canonical channel order of every label raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    SharpPleura,
    FuzzyPleura,
    FasciaBand,
    ALine,
    SubALine,
    VerticalLine,
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [
        Channel::SharpPleura,
        Channel::FuzzyPleura,
        Channel::FasciaBand,
        Channel::ALine,
        Channel::SubALine,
        Channel::VerticalLine,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::SharpPleura => "sharp_pleura",
            Channel::FuzzyPleura => "fuzzy_pleura",
            Channel::FasciaBand => "fascia_band",
            Channel::ALine => "a_line",
            Channel::SubALine => "sub_a_line",
            Channel::VerticalLine => "vertical_line",
        }
    }

    pub fn from_index(index: usize) -> Result<Self, LabelError> {
        Self::ALL.get(index).copied().ok_or(LabelError::BadChannel(index))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the seven confidence cutoffs used to binarize labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ConfidenceThreshold(u8);

impl ConfidenceThreshold {
    /// The fixed threshold grid in ascending order.
    pub const ALL: [ConfidenceThreshold; 7] = [
        ConfidenceThreshold(0),
        ConfidenceThreshold(20),
        ConfidenceThreshold(40),
        ConfidenceThreshold(50),
        ConfidenceThreshold(60),
        ConfidenceThreshold(80),
        ConfidenceThreshold(100),
    ];

    pub fn new(level: u8) -> Result<Self, LabelError> {
        match level {
            0 | 20 | 40 | 50 | 60 | 80 | 100 => Ok(Self(level)),
            other => Err(LabelError::UnsupportedThreshold(other)),
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    /// Whether a raw confidence value counts as foreground at this threshold.
    ///
    /// The 0% threshold means "any nonzero confidence"; every other level
    /// is inclusive.
    #[inline]
    pub fn admits(self, confidence: u8) -> bool {
        if self.0 == 0 {
            confidence > 0
        } else {
            confidence >= self.0
        }
    }

    /// Loss weight given to background (thresholded-out) pixels.
    pub fn background_weight(self) -> f64 {
        match self.0 {
            0 | 100 => FIXED_BACKGROUND_WEIGHT,
            t => f64::from(t) / 100.0,
        }
    }

    /// Column label in the style of the threshold sweep figures.
    pub fn display_rule(self) -> String {
        match self.0 {
            0 => "> 0%".to_string(),
            100 => "= 100%".to_string(),
            t => format!(">= {t}%"),
        }
    }
}

impl TryFrom<u8> for ConfidenceThreshold {
    type Error = LabelError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ConfidenceThreshold> for u8 {
    fn from(t: ConfidenceThreshold) -> u8 {
        t.0
    }
}

impl fmt::Display for ConfidenceThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), LabelError> {
    if width == 0 || height == 0 {
        return Err(LabelError::BadDimensions { width, height });
    }
    Ok(())
}

/// Per-pixel, per-channel annotator confidence in integer percent.
///
/// Values are laid out channel-major, then row-major within a channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl ConfidenceMap {
    pub fn zeros(width: usize, height: usize) -> Result<Self, LabelError> {
        check_dims(width, height)?;
        Ok(Self { width, height, values: vec![0; CHANNELS * width * height] })
    }

    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self, LabelError> {
        check_dims(width, height)?;
        let expected = CHANNELS * width * height;
        if values.len() != expected {
            return Err(LabelError::PayloadLength { expected, got: values.len() });
        }
        if let Some(&bad) = values.iter().find(|&&v| v > 100) {
            return Err(LabelError::ValueOutOfRange(bad));
        }
        Ok(Self { width, height, values })
    }

    /// Builds a map with a single populated channel; the rest stay zero.
    pub fn from_plane(
        width: usize,
        height: usize,
        channel: Channel,
        plane: &[u8],
    ) -> Result<Self, LabelError> {
        let mut map = Self::zeros(width, height)?;
        if plane.len() != width * height {
            return Err(LabelError::PayloadLength { expected: width * height, got: plane.len() });
        }
        if let Some(&bad) = plane.iter().find(|&&v| v > 100) {
            return Err(LabelError::ValueOutOfRange(bad));
        }
        map.plane_mut(channel).copy_from_slice(plane);
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn plane(&self, channel: Channel) -> &[u8] {
        let n = self.width * self.height;
        &self.values[channel.index() * n..(channel.index() + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: Channel) -> &mut [u8] {
        let n = self.width * self.height;
        &mut self.values[channel.index() * n..(channel.index() + 1) * n]
    }

    pub fn get(&self, channel: Channel, x: usize, y: usize) -> u8 {
        self.plane(channel)[y * self.width + x]
    }

    /// Sets one value, clamping to 100.
    pub fn set(&mut self, channel: Channel, x: usize, y: usize, value: u8) {
        let w = self.width;
        self.plane_mut(channel)[y * w + x] = value.min(100);
    }

    /// Raises a value to `value` if it is currently lower.
    pub fn raise(&mut self, channel: Channel, x: usize, y: usize, value: u8) {
        let w = self.width;
        let slot = &mut self.plane_mut(channel)[y * w + x];
        *slot = (*slot).max(value.min(100));
    }
}

/// Thresholded six-channel binary target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMaskStack {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMaskStack {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; CHANNELS * width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, LabelError> {
        check_dims(width, height)?;
        let expected = CHANNELS * width * height;
        if bits.len() != expected {
            return Err(LabelError::PayloadLength { expected, got: bits.len() });
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn plane(&self, channel: usize) -> &[bool] {
        let n = self.width * self.height;
        &self.bits[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [bool] {
        let n = self.width * self.height;
        &mut self.bits[channel * n..(channel + 1) * n]
    }

    /// True if every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMaskStack) -> bool {
        self.dims() == other.dims()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Per-pixel loss weights aligned with a [`BinaryMaskStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl WeightMap {
    /// Uniform weights, used by unweighted training and by the trimap loss.
    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, weights: vec![1.0; CHANNELS * width * height] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }
}

/// Pixels whose raw confidence is exactly 0 or 100.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimapMask {
    width: usize,
    height: usize,
    certain: Vec<bool>,
    targets: Vec<u8>,
}

impl TrimapMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn certain(&self) -> &[bool] {
        &self.certain
    }

    /// Target (0 or 1) for a certain pixel, `None` for an uncertain one.
    pub fn target(&self, index: usize) -> Option<f64> {
        self.certain[index].then(|| f64::from(self.targets[index]) / 100.0)
    }

    pub fn certain_count(&self) -> usize {
        self.certain.iter().filter(|&&c| c).count()
    }
}

pub fn threshold_map(cmap: &ConfidenceMap, threshold: ConfidenceThreshold) -> BinaryMaskStack {
    BinaryMaskStack {
        width: cmap.width,
        height: cmap.height,
        bits: cmap.values.iter().map(|&v| threshold.admits(v)).collect(),
    }
}

/// Loss weights for a thresholded target.
///
/// Foreground pixels carry their own confidence; background pixels carry
/// the threshold level, or 0.8 for the 0% and 100% models.
pub fn compute_weights(
    cmap: &ConfidenceMap,
    threshold: ConfidenceThreshold,
    mask: &BinaryMaskStack,
) -> Result<WeightMap, LabelError> {
    if cmap.dims() != mask.dims() {
        return Err(LabelError::DimensionMismatch(cmap.dims(), mask.dims()));
    }
    let background = threshold.background_weight();
    let weights = cmap
        .values
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &fg)| if fg { f64::from(v) / 100.0 } else { background })
        .collect();
    Ok(WeightMap { width: cmap.width, height: cmap.height, weights })
}

pub fn trimap_select(cmap: &ConfidenceMap) -> TrimapMask {
    TrimapMask {
        width: cmap.width,
        height: cmap.height,
        certain: cmap.values.iter().map(|&v| v == 0 || v == 100).collect(),
        targets: cmap.values.clone(),
    }
}

pub fn foreground_fraction(mask: &BinaryMaskStack, channel: usize) -> Result<f64, LabelError> {
    if channel >= CHANNELS {
        return Err(LabelError::BadChannel(channel));
    }
    let plane = mask.plane(channel);
    let on = plane.iter().filter(|&&b| b).count();
    Ok(on as f64 / plane.len() as f64)
}
