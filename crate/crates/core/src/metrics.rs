//! Segmentation and downstream metrics.
//!
//! All losses are means over every pixel of every channel, so values do not
//! depend on resolution. Probabilities are clamped to `[EPS, 1 - EPS]`
//! before any logarithm.

use thiserror::Error;

use crate::label::{trimap_select, BinaryMaskStack, ConfidenceMap, WeightMap, CHANNELS};

pub const EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    /// The metric has no value on this input (e.g. no certain pixels).
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Per-channel sigmoid outputs of a segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbMap {
    /// Wraps raw probabilities, clamping each into `[EPS, 1 - EPS]`.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let expected = CHANNELS * width * height;
        if values.len() != expected {
            return Err(MetricError::LengthMismatch(values.len(), expected));
        }
        Ok(Self { width, height, values: values.into_iter().map(clamp_prob).collect() })
    }

    pub fn constant(width: usize, height: usize, p: f64) -> Self {
        Self { width, height, values: vec![clamp_prob(p); CHANNELS * width * height] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[channel * n..(channel + 1) * n]
    }

    /// Binary mask at a probability cut (`p >= cut`).
    pub fn binarize(&self, cut: f64) -> BinaryMaskStack {
        BinaryMaskStack::from_bits(self.width, self.height, self.values.iter().map(|&p| p >= cut).collect())
            .expect("dimensions already validated")
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        0.5
    } else {
        p.clamp(EPS, 1.0 - EPS)
    }
}

#[inline]
fn bce(target: f64, p: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(MetricError::DimensionMismatch(a, b));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouResult {
    /// `None` where both prediction and ground truth are empty.
    pub per_channel: [Option<f64>; CHANNELS],
    /// Mean over channels with a nonempty union; 1.0 if there are none.
    pub macro_iou: f64,
}

pub fn iou(pred: &BinaryMaskStack, gt: &BinaryMaskStack) -> Result<IouResult> {
    same_dims(pred.dims(), gt.dims())?;
    let mut per_channel = [None; CHANNELS];
    for (c, slot) in per_channel.iter_mut().enumerate() {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &g) in pred.plane(c).iter().zip(gt.plane(c)) {
            inter += (p && g) as usize;
            union += (p || g) as usize;
        }
        if union > 0 {
            *slot = Some(inter as f64 / union as f64);
        }
    }
    let defined: Vec<f64> = per_channel.iter().flatten().copied().collect();
    let macro_iou = if defined.is_empty() { 1.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok(IouResult { per_channel, macro_iou })
}

/// Mean of `-w [y ln p + (1 - y) ln(1 - p)]` over all pixels and channels.
pub fn weighted_ce(pred: &ProbMap, gt: &BinaryMaskStack, weights: &WeightMap) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    same_dims(pred.dims(), weights.dims())?;
    let n = pred.values.len() as f64;
    let total: f64 = pred
        .values
        .iter()
        .zip(gt.bits())
        .zip(weights.values())
        .map(|((&p, &y), &w)| w * bce(if y { 1.0 } else { 0.0 }, p))
        .sum();
    Ok(total / n)
}

/// Unweighted cross-entropy against the raw soft targets `confidence / 100`.
pub fn soft_ce(pred: &ProbMap, cmap: &ConfidenceMap) -> Result<f64> {
    same_dims(pred.dims(), cmap.dims())?;
    let n = pred.values.len() as f64;
    let total: f64 = pred
        .values
        .iter()
        .zip(cmap.values())
        .map(|(&p, &c)| bce(f64::from(c) / 100.0, p))
        .sum();
    Ok(total / n)
}

/// Cross-entropy over only the pixels labelled exactly 0% or 100%.
pub fn trimap_loss(pred: &ProbMap, cmap: &ConfidenceMap) -> Result<f64> {
    same_dims(pred.dims(), cmap.dims())?;
    let tri = trimap_select(cmap);
    let (mut total, mut count) = (0.0, 0usize);
    for (i, &p) in pred.values.iter().enumerate() {
        if let Some(target) = tri.target(i) {
            total += bce(target, p);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricError::Undefined("trimap loss has no certain pixels"));
    }
    Ok(total / count as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let mse = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScores {
    pub accuracy: f64,
    /// `None` when the targets contain no positives.
    pub recall: Option<f64>,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
}

pub fn classification_scores<C: PartialEq>(preds: &[C], targets: &[C], positive: &C) -> Result<ClassificationScores> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let (mut correct, mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        correct += (p == t) as usize;
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(ClassificationScores {
        accuracy: correct as f64 / preds.len() as f64,
        recall: ratio(tp, tp + fneg),
        precision: ratio(tp, tp + fp),
    })
}

/// Sample mean and (population) standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{compute_weights, threshold_map, Channel, ConfidenceThreshold};
    use approx::assert_abs_diff_eq;

    fn mask(w: usize, h: usize, plane: &[u8]) -> BinaryMaskStack {
        let cmap = ConfidenceMap::from_plane(w, h, Channel::SharpPleura, plane).unwrap();
        threshold_map(&cmap, ConfidenceThreshold::new(0).unwrap())
    }

    fn probs(w: usize, h: usize, plane: &[f64], fill: f64) -> ProbMap {
        let mut v = vec![fill; CHANNELS * w * h];
        v[..plane.len()].copy_from_slice(plane);
        ProbMap::new(w, h, v).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = mask(2, 2, &[1, 1, 0, 0]);
        let b = mask(2, 2, &[1, 0, 1, 0]);
        assert_eq!(iou(&a, &a).unwrap().macro_iou, 1.0);
        assert_abs_diff_eq!(iou(&a, &b).unwrap().macro_iou, 1.0 / 3.0, epsilon = 1e-15);
        let c = mask(2, 2, &[0, 0, 0, 1]);
        assert_eq!(iou(&a, &c).unwrap().macro_iou, 0.0);
        let r = iou(&a, &b).unwrap();
        assert!(r.per_channel[1..].iter().all(Option::is_none));

        let empty = BinaryMaskStack::zeros(2, 2);
        assert_eq!(iou(&empty, &empty).unwrap().macro_iou, 1.0);
        assert!(iou(&empty, &BinaryMaskStack::zeros(3, 2)).is_err());
    }

    #[test]
    fn weighted_ce_values() {
        // single-pixel maps: only channel 0 differs from a perfect prediction
        let gt = mask(1, 1, &[1]);
        let pred = ProbMap::new(1, 1, vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let w = WeightMap::ones(1, 1);
        let v = weighted_ce(&pred, &gt, &w).unwrap();
        let clamp_tail = 5.0 * -(1.0 - EPS).ln();
        assert_abs_diff_eq!(v * 6.0, std::f64::consts::LN_2 + clamp_tail, epsilon = 1e-12);

        let cmap = ConfidenceMap::zeros(1, 1).unwrap();
        let t100 = ConfidenceThreshold::new(100).unwrap();
        let gt = threshold_map(&cmap, t100);
        let w = compute_weights(&cmap, t100, &gt).unwrap();
        let pred = ProbMap::constant(1, 1, 0.1);
        assert_abs_diff_eq!(weighted_ce(&pred, &gt, &w).unwrap(), -0.8 * 0.9f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(-0.8 * 0.9f64.ln(), 0.0843, epsilon = 5e-5);

        let exact = ProbMap::constant(1, 1, 0.0);
        assert!(weighted_ce(&exact, &gt, &w).unwrap() < 1e-6);
    }

    #[test]
    fn soft_ce_values() {
        let cmap = ConfidenceMap::from_values(1, 1, vec![50; 6]).unwrap();
        assert_abs_diff_eq!(soft_ce(&ProbMap::constant(1, 1, 0.5), &cmap).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);

        let cmap = ConfidenceMap::from_values(1, 1, vec![60; 6]).unwrap();
        let at = |p| soft_ce(&ProbMap::constant(1, 1, p), &cmap).unwrap();
        assert_abs_diff_eq!(at(0.6), 0.6730116670092565, epsilon = 1e-12);
        assert!(at(0.59) > at(0.6) && at(0.61) > at(0.6));

        let cmap = ConfidenceMap::from_values(1, 1, vec![100; 6]).unwrap();
        assert!(soft_ce(&ProbMap::constant(1, 1, 1.0), &cmap).unwrap() < 1e-6);
    }

    #[test]
    fn trimap_values() {
        let cmap = ConfidenceMap::from_plane(3, 1, Channel::SharpPleura, &[0, 50, 100]).unwrap();
        let mid = ConfidenceMap::from_values(3, 1, {
            let mut v = vec![50; 18];
            v[..3].copy_from_slice(&[0, 50, 100]);
            v
        })
        .unwrap();
        let pred = probs(3, 1, &[0.1, 0.9, 0.8], 0.5);
        let expected = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
        assert_abs_diff_eq!(trimap_loss(&pred, &mid).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.1643, epsilon = 1e-4);

        // other channels are all-zero and therefore certain
        assert!(trimap_loss(&pred, &cmap).is_ok());

        let all_mid = ConfidenceMap::from_values(3, 1, vec![50; 18]).unwrap();
        assert!(matches!(trimap_loss(&pred, &all_mid), Err(MetricError::Undefined(_))));

        let certain = ConfidenceMap::from_values(3, 1, (0..18).map(|i| if i % 3 == 0 { 100 } else { 0 }).collect()).unwrap();
        let pred = ProbMap::new(3, 1, (0..18).map(|i| (i as f64 + 1.0) / 20.0).collect()).unwrap();
        assert_eq!(trimap_loss(&pred, &certain).unwrap(), soft_ce(&pred, &certain).unwrap());
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(rmse(&[0.3], &[0.8]).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(rmse(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn classification() {
        let s = classification_scores(&[1, 0, 0, 0], &[1, 1, 0, 0], &1).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.recall, Some(0.5));
        assert_eq!(s.precision, Some(1.0));

        let s = classification_scores(&[1, 0], &[1, 0], &1).unwrap();
        assert_eq!((s.accuracy, s.recall, s.precision), (1.0, Some(1.0), Some(1.0)));

        let s = classification_scores(&[0, 0], &[1, 0], &1).unwrap();
        assert_eq!(s.recall, Some(0.0));
        assert_eq!(s.precision, None);
        assert!(classification_scores::<u8>(&[], &[], &1).is_err());
    }
}
