use std::collections::HashSet;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DownstreamError;
use crate::dataio::{video_refs, CohortManifest, VideoRef};

/// Two S/F values closer than this count as unchanged.
pub const SAME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairLabel {
    Decrease,
    Same,
    Increase,
}

impl PairLabel {
    pub const ALL: [PairLabel; 3] = [PairLabel::Decrease, PairLabel::Same, PairLabel::Increase];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TwoClass {
    NotIncrease,
    Increase,
}

/// Direction of change from the first S/F value to the second.
pub fn label_pair(sf_a: f64, sf_b: f64) -> PairLabel {
    if (sf_a - sf_b).abs() <= SAME_TOLERANCE {
        PairLabel::Same
    } else if sf_a > sf_b {
        PairLabel::Decrease
    } else {
        PairLabel::Increase
    }
}

pub fn collapse_2class(label: PairLabel) -> TwoClass {
    match label {
        PairLabel::Increase => TwoClass::Increase,
        PairLabel::Decrease | PairLabel::Same => TwoClass::NotIncrease,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    /// Default pair cap for the role.
    pub fn default_cap(self) -> usize {
        match self {
            Role::Train => 2000,
            Role::Val => 200,
            Role::Test => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub video_a: String,
    pub video_b: String,
    pub patient_a: String,
    pub patient_b: String,
    pub zone: u8,
    pub label: PairLabel,
}

/// Same-zone video pairs among `patients`.
///
/// Training pairs may mix patients and days and get a seeded random
/// orientation; validation and test pairs stay within one patient and keep
/// manifest order (earlier day first). Pools larger than `cap` are
/// subsampled with the seed.
pub fn build_pairs(
    manifest: &CohortManifest,
    patients: &[String],
    role: Role,
    seed: u64,
    cap: usize,
) -> Result<Vec<PairExample>, DownstreamError> {
    let keep: HashSet<&str> = patients.iter().map(String::as_str).collect();
    let refs: Vec<VideoRef> = video_refs(manifest).into_iter().filter(|r| keep.contains(r.patient_id.as_str())).collect();
    let mut pool = Vec::new();
    for (i, a) in refs.iter().enumerate() {
        for b in &refs[i + 1..] {
            if a.zone != b.zone || (role != Role::Train && a.patient_id != b.patient_id) {
                continue;
            }
            pool.push((a, b));
        }
    }
    if pool.is_empty() || cap == 0 {
        return Err(DownstreamError::NoPairs(role));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if pool.len() > cap {
        let mut picked = index::sample(&mut rng, pool.len(), cap).into_vec();
        picked.sort_unstable();
        pool = picked.into_iter().map(|i| pool[i]).collect();
    }
    let mut out: Vec<PairExample> = pool
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = if role == Role::Train && rng.random_bool(0.5) { (b, a) } else { (a, b) };
            PairExample {
                video_a: a.video_id.clone(),
                video_b: b.video_id.clone(),
                patient_a: a.patient_id.clone(),
                patient_b: b.patient_id.clone(),
                zone: a.zone,
                label: label_pair(a.sf, b.sf),
            }
        })
        .collect();
    if role == Role::Train {
        out.shuffle(&mut rng);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Avg,
    Median,
    Max,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Avg, Aggregation::Median, Aggregation::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Avg => "avg",
            Aggregation::Median => "median",
            Aggregation::Max => "max",
        }
    }
}

/// Combines per-view predictions of one patient-day.
pub fn aggregate_views(preds: &[f64], mode: Aggregation) -> Result<f64, DownstreamError> {
    if preds.is_empty() {
        return Err(DownstreamError::EmptyAggregation);
    }
    let n = preds.len();
    Ok(match mode {
        Aggregation::Avg => preds.iter().sum::<f64>() / n as f64,
        Aggregation::Max => preds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Median => {
            let mut sorted = preds.to_vec();
            sorted.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            }
        }
    })
}

/// Majority vote over per-view two-class logits `[not_readmitted, readmitted]`.
///
/// A tied vote goes to the class with the larger logit sum over views; if
/// the sums tie as well the result is "not readmitted".
pub fn majority_vote(view_logits: &[[f64; 2]]) -> Result<bool, DownstreamError> {
    if view_logits.is_empty() {
        return Err(DownstreamError::EmptyAggregation);
    }
    let yes = view_logits.iter().filter(|l| l[1] > l[0]).count();
    let no = view_logits.len() - yes;
    if yes != no {
        return Ok(yes > no);
    }
    let sum = |c: usize| view_logits.iter().map(|l| l[c]).sum::<f64>();
    Ok(sum(1) > sum(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_labels() {
        assert_eq!(label_pair(0.8, 0.6), PairLabel::Decrease);
        assert_eq!(label_pair(0.5, 0.5), PairLabel::Same);
        assert_eq!(label_pair(0.3, 0.9), PairLabel::Increase);
        assert_eq!(collapse_2class(PairLabel::Decrease), TwoClass::NotIncrease);
        assert_eq!(collapse_2class(PairLabel::Same), TwoClass::NotIncrease);
        assert_eq!(collapse_2class(PairLabel::Increase), TwoClass::Increase);
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_views(&[0.2, 0.4, 0.6, 0.8], Aggregation::Median).unwrap(), 0.5);
        assert_eq!(aggregate_views(&[0.2, 0.5, 0.3], Aggregation::Max).unwrap(), 0.5);
        for mode in Aggregation::ALL {
            assert!((aggregate_views(&[0.7; 6], mode).unwrap() - 0.7).abs() < 1e-15);
        }
        assert!(aggregate_views(&[], Aggregation::Avg).is_err());
    }

    #[test]
    fn vote_examples() {
        let vote = |v: [u8; 6], yes_margin: f64, no_margin: f64| {
            let logits: Vec<[f64; 2]> =
                v.iter().map(|&b| if b == 1 { [0.0, yes_margin] } else { [no_margin, 0.0] }).collect();
            majority_vote(&logits).unwrap()
        };
        assert!(vote([1, 1, 0, 0, 1, 1], 0.1, 5.0));
        assert!(!vote([1, 0, 0, 0, 1, 0], 5.0, 0.1));
        let tie: Vec<[f64; 2]> = [[0.1, 1.0], [0.2, 1.1], [0.3, 1.1], [1.0, 0.0], [1.0, 0.0], [0.3, 0.0]].to_vec();
        // votes [1,1,1,0,0,0]; class-1 sum 3.2 beats class-0 sum 2.9
        assert!(majority_vote(&tie).unwrap());
    }
}
