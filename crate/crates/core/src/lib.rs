//! Confidence-aware segmentation lab.
//!
//! Expert labels carry a per-pixel confidence (0-100%). This crate turns
//! them into thresholded, confidence-weighted training targets, trains a
//! small pyramid segmenter on them, scores it with overlap and
//! cross-entropy metrics, and feeds its outputs into three video-level
//! downstream tasks. A deterministic phantom generator supplies data with a
//! known planted signal.

pub mod dataio;
pub mod downstream;
pub mod experiment;
pub mod label;
pub mod metrics;
pub mod phantom;
pub mod segmodel;
pub mod tensornet;
