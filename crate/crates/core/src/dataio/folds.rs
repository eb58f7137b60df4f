use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{file_err, CohortManifest, DataError, Result};

/// Patient-wise partition: one held-out test set plus `fold_count - 1`
/// cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub seed: u64,
    pub held_out_test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    /// Patients outside `val_fold` and the test set.
    pub fn train_patients(&self, val_fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != val_fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }

    pub fn val_patients(&self, val_fold: usize) -> Vec<String> {
        self.folds.get(val_fold).cloned().unwrap_or_default()
    }

    /// True when no patient appears in two groups.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.held_out_test
            .iter()
            .chain(self.folds.iter().flatten())
            .all(|id| seen.insert(id.as_str()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(file_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Seeded patient-wise split.
///
/// Patient ids are sorted, shuffled with `seed`, the first
/// `test_patient_count` become the held-out test set and the remainder is
/// dealt round-robin into `fold_count - 1` folds.
pub fn split_folds(
    manifest: &CohortManifest,
    fold_count: usize,
    test_patient_count: usize,
    seed: u64,
) -> Result<FoldSplit> {
    let have = manifest.patients.len();
    let need = fold_count + test_patient_count;
    if fold_count < 2 || have < need {
        return Err(DataError::TooFewPatients { have, need: need.max(2) });
    }
    let mut ids: Vec<String> = manifest.patients.iter().map(|p| p.patient_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != have {
        return Err(DataError::InvalidManifest("duplicate patient ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let mut held_out_test = ids[..test_patient_count].to_vec();
    held_out_test.sort();
    let cv = fold_count - 1;
    let mut folds = vec![Vec::new(); cv];
    for (i, id) in ids[test_patient_count..].iter().enumerate() {
        folds[i % cv].push(id.clone());
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldSplit { fold_count, seed, held_out_test, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{DayRecord, PatientRecord};

    fn cohort(n: usize) -> CohortManifest {
        let day = |i| DayRecord { day_index: i, sf_ratio_normalized: 0.5, videos: vec![], planted: None };
        CohortManifest {
            patients: (0..n)
                .map(|i| PatientRecord {
                    patient_id: format!("p{i:03}"),
                    readmission_flag: false,
                    days: vec![day(0), day(1)],
                })
                .collect(),
            planted_link: None,
            seed: None,
        }
    }

    #[test]
    fn reference_scale_split() {
        let split = split_folds(&cohort(42), 6, 4, 7).unwrap();
        assert_eq!(split.held_out_test.len(), 4);
        assert_eq!(split.folds.len(), 5);
        let sizes: Vec<_> = split.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 38);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(split.is_disjoint());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = cohort(20);
        assert_eq!(split_folds(&m, 6, 4, 1).unwrap(), split_folds(&m, 6, 4, 1).unwrap());
        assert_ne!(split_folds(&m, 6, 4, 1).unwrap(), split_folds(&m, 6, 4, 2).unwrap());
    }

    #[test]
    fn too_few() {
        assert!(matches!(split_folds(&cohort(5), 6, 0, 0), Err(DataError::TooFewPatients { .. })));
    }

    #[test]
    fn train_val_partition() {
        let split = split_folds(&cohort(30), 6, 4, 3).unwrap();
        let train = split.train_patients(2);
        let val = split.val_patients(2);
        assert_eq!(train.len() + val.len(), 26);
        assert!(val.iter().all(|v| !train.contains(v)));
    }
}
