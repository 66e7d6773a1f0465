use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, ClassifierConfig};
use crate::dataset::PairClass;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            stratified: true,
            seed: 42,
        }
    }
}

/// Groups positions by class (fixed class order), each group in input order.
fn strata(vectors: &[FeatureVector]) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); PairClass::COUNT];
    for (i, v) in vectors.iter().enumerate() {
        let class = v.pair_class.ok_or_else(|| {
            Error::Stratification(format!("vector {} has no pair class", v.pair_id))
        })?;
        groups[class.index()].push(i);
    }
    Ok(groups)
}

/// Seeded, optionally stratified train/test partition. Both halves keep input order.
pub fn split_dataset(
    vectors: &[FeatureVector],
    spec: &SplitSpec,
) -> Result<(Vec<FeatureVector>, Vec<FeatureVector>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    if vectors.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 vectors to split, got {}",
            vectors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = if spec.stratified {
        let groups = strata(vectors)?;
        if let Some(c) = groups.iter().position(|g| g.len() == 1) {
            return Err(Error::Stratification(format!(
                "class {} has a single member and cannot be stratified",
                PairClass::ALL[c]
            )));
        }
        groups
    } else {
        vec![(0..vectors.len()).collect()]
    };

    let mut in_train = vec![false; vectors.len()];
    for mut g in groups.into_iter().filter(|g| !g.is_empty()) {
        g.shuffle(&mut rng);
        let take = ((g.len() as f64 * spec.train_fraction).round() as usize).clamp(1, g.len() - 1);
        for &i in &g[..take] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (v, t) in vectors.iter().zip(in_train) {
        if t {
            train.push(v.clone());
        } else {
            test.push(v.clone());
        }
    }
    Ok((train, test))
}

/// Fold index per vector. Within each class the shuffled members are dealt
/// round-robin, continuing the deal across classes so fold totals stay balanced.
pub fn stratified_folds(vectors: &[FeatureVector], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be at least 2, got {folds}")));
    }
    if folds > vectors.len() {
        return Err(Error::Config(format!(
            "{folds} folds exceed {} training vectors",
            vectors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; vectors.len()];
    let mut next = 0;
    for mut g in strata(vectors)? {
        g.shuffle(&mut rng);
        for i in g {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub mean: f64,
    pub per_fold: Vec<f64>,
}

/// Stratified k-fold cross-validation; each fold is held out once.
pub fn cross_validate(
    train: &[FeatureVector],
    folds: usize,
    trainer: &ClassifierConfig,
    seed: u64,
) -> Result<CvResult> {
    let assignment = stratified_folds(train, folds, seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (mut fit, mut held) = (Vec::new(), Vec::new());
        for (v, &a) in train.iter().zip(&assignment) {
            if a == fold {
                held.push(v.clone());
            } else {
                fit.push(v.clone());
            }
        }
        let model = trainer.train(&fit)?;
        per_fold.push(evaluate(&model, &held)?.overall_success);
    }
    let mean = per_fold.iter().sum::<f64>() / folds as f64;
    Ok(CvResult { mean, per_fold })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::ForestConfig;
    use super::*;

    fn labelled(counts: [usize; 3]) -> Vec<FeatureVector> {
        let mut out = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                out.push(fv(out.len(), PairClass::ALL[c], vec![out.len() as f64]));
            }
        }
        out
    }

    fn class_counts(v: &[FeatureVector]) -> [usize; 3] {
        let mut c = [0; 3];
        for x in v {
            c[x.pair_class.unwrap().index()] += 1;
        }
        c
    }

    #[test]
    fn ecg200_sized_split() {
        let data = labelled([8778, 2211, 8911]);
        let (train, test) = split_dataset(&data, &SplitSpec::default()).unwrap();
        assert_eq!(train.len() + test.len(), 19900);
        assert!((train.len() as i64 - 13930).abs() <= 3, "{}", train.len());
        let tc = class_counts(&train);
        for (c, &n) in [8778usize, 2211, 8911].iter().enumerate() {
            assert!((tc[c] as f64 - 0.7 * n as f64).abs() <= 1.0);
        }
        let mut ids: Vec<usize> = train.iter().chain(&test).map(|v| v.pair_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..19900).collect::<Vec<_>>());
    }

    #[test]
    fn one_class_ten_items() {
        let data = labelled([0, 10, 0]);
        let (train, test) = split_dataset(&data, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
    }

    #[test]
    fn same_seed_same_partition() {
        let data = labelled([30, 12, 25]);
        let spec = SplitSpec { seed: 9, ..SplitSpec::default() };
        assert_eq!(split_dataset(&data, &spec).unwrap(), split_dataset(&data, &spec).unwrap());
        let other = SplitSpec { seed: 10, ..spec };
        assert_ne!(split_dataset(&data, &spec).unwrap().0, split_dataset(&data, &other).unwrap().0);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_dataset(&labelled([3, 3, 2]), &SplitSpec::default()), Err(Error::InsufficientData(_))));
        assert!(matches!(split_dataset(&labelled([10, 1, 0]), &SplitSpec::default()), Err(Error::Stratification(_))));
        let mut data = labelled([10, 0, 0]);
        data[0].pair_class = None;
        assert!(matches!(split_dataset(&data, &SplitSpec::default()), Err(Error::Stratification(_))));
        assert!(split_dataset(&labelled([10, 0, 0]), &SplitSpec { train_fraction: 1.0, ..SplitSpec::default() }).is_err());
        let unstrat = SplitSpec { stratified: false, ..SplitSpec::default() };
        let (train, _) = split_dataset(&labelled([10, 1, 0]), &unstrat).unwrap();
        assert_eq!(train.len(), 8);
    }

    #[test]
    fn fold_sizes_balanced_per_class() {
        let data = labelled([6145, 1548, 6238]);
        let a = stratified_folds(&data, 10, 3).unwrap();
        for c in 0..3 {
            let mut sizes = [0usize; 10];
            for (v, &f) in data.iter().zip(&a) {
                if v.pair_class.unwrap().index() == c {
                    sizes[f] += 1;
                }
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert!(stratified_folds(&data[..5], 10, 0).is_err());
        assert!(stratified_folds(&data, 1, 0).is_err());
    }

    #[test]
    fn constant_class_folds_are_perfect() {
        let data = labelled([0, 0, 40]);
        let cfg = ClassifierConfig::RandomForest(ForestConfig { num_trees: 3, ..ForestConfig::default() });
        let cv = cross_validate(&data, 10, &cfg, 1).unwrap();
        assert_eq!(cv.per_fold, vec![1.0; 10]);
        assert_eq!(cv.mean, 1.0);
    }

    #[test]
    fn cv_is_deterministic() {
        let data = blobs(30, 9.0, 5);
        let cfg = ClassifierConfig::Knn { k: 3 };
        assert_eq!(cross_validate(&data, 5, &cfg, 7).unwrap(), cross_validate(&data, 5, &cfg, 7).unwrap());
    }
}
