//! Attacker-side learning on split-count features.

mod forest;
mod knn;
mod report;
mod split;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use forest::{ForestConfig, RandomForest};
pub use knn::Knn;
pub use report::AttackReport;
pub use split::{cross_validate, split_dataset, stratified_folds, CvResult, SplitSpec};

use crate::dataset::PairClass;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Dense row-major training matrix with class indices.
#[derive(Debug, Clone)]
pub(crate) struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Matrix {
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Matrix> {
        let cols = vectors
            .first()
            .map(FeatureVector::dim)
            .ok_or_else(|| Error::InsufficientData("empty training set".into()))?;
        let mut data = Vec::with_capacity(cols * vectors.len());
        let mut labels = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.dim() != cols {
                return Err(Error::Shape(format!(
                    "pair {} has dimension {}, expected {cols}",
                    v.pair_id,
                    v.dim()
                )));
            }
            let class = v.pair_class.ok_or_else(|| {
                Error::Domain(format!("training vector {} has no label", v.pair_id))
            })?;
            data.extend_from_slice(&v.values);
            labels.push(class.index() as u8);
        }
        Ok(Matrix {
            rows: vectors.len(),
            cols,
            data,
            labels,
        })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn class_counts(&self) -> [usize; PairClass::COUNT] {
        let mut counts = [0; PairClass::COUNT];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Class order used to break ties: larger training prior first, then the fixed class order.
pub(crate) fn prior_rank(counts: &[usize; PairClass::COUNT]) -> [usize; PairClass::COUNT] {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut rank = [0; PairClass::COUNT];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    rank
}

/// Argmax over class tallies, ties resolved by `rank` (lower wins).
pub(crate) fn argmax_ranked<T: PartialOrd + Copy>(tally: &[T; PairClass::COUNT], rank: &[usize; PairClass::COUNT]) -> usize {
    let mut best = 0;
    for c in 1..PairClass::COUNT {
        if tally[c] > tally[best] || (tally[c] == tally[best] && rank[c] < rank[best]) {
            best = c;
        }
    }
    best
}

pub trait Classifier: Send + Sync {
    fn predict(&self, x: &[f64]) -> PairClass;
    fn dim(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    RandomForest(ForestConfig),
    Knn { k: usize },
}

impl ClassifierConfig {
    pub fn train(&self, train: &[FeatureVector]) -> Result<Model> {
        Ok(match self {
            ClassifierConfig::RandomForest(cfg) => Model::RandomForest(train_random_forest(train, cfg)?),
            ClassifierConfig::Knn { k } => Model::Knn(train_knn(train, *k)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierConfig::RandomForest(_) => "rf",
            ClassifierConfig::Knn { .. } => "knn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    RandomForest(RandomForest),
    Knn(Knn),
}

impl Classifier for Model {
    fn predict(&self, x: &[f64]) -> PairClass {
        match self {
            Model::RandomForest(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Model::RandomForest(m) => m.dim(),
            Model::Knn(m) => m.dim(),
        }
    }
}

pub const MODEL_FORMAT: &str = "dtw-leak-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Consistency(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }
}

pub fn train_random_forest(train: &[FeatureVector], cfg: &ForestConfig) -> Result<RandomForest> {
    let m = Matrix::from_vectors(train)?;
    RandomForest::fit(&m, cfg)
}

pub fn train_knn(train: &[FeatureVector], k: usize) -> Result<Knn> {
    let m = Matrix::from_vectors(train)?;
    Knn::fit(m, k)
}

/// Predicts every test vector (in parallel, order preserved).
pub fn predict_all<C: Classifier + ?Sized>(model: &C, test: &[FeatureVector]) -> Result<Vec<PairClass>> {
    if let Some(bad) = test.iter().find(|v| v.dim() != model.dim()) {
        return Err(Error::Shape(format!(
            "pair {} has dimension {}, model expects {}",
            bad.pair_id,
            bad.dim(),
            model.dim()
        )));
    }
    Ok(test.par_iter().map(|v| model.predict(&v.values)).collect())
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, test: &[FeatureVector]) -> Result<AttackReport> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let predictions = predict_all(model, test)?;
    let mut confusion = [[0u64; PairClass::COUNT]; PairClass::COUNT];
    for (v, p) in test.iter().zip(&predictions) {
        let actual = v
            .pair_class
            .ok_or_else(|| Error::Domain(format!("test vector {} has no label", v.pair_id)))?;
        confusion[actual.index()][p.index()] += 1;
    }
    Ok(AttackReport::from_confusion(confusion))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::features::Scheme;
    use rand::{Rng, SeedableRng};

    pub fn fv(id: usize, class: PairClass, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            pair_id: id,
            pair_class: Some(class),
            scheme: Scheme::SingleDirectionCounts,
            num_splits: values.len(),
            values,
        }
    }

    /// Three Gaussian-ish blobs, one per class, along a diagonal.
    pub fn blobs(n_per_class: usize, spread: f64, seed: u64) -> Vec<FeatureVector> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (c, class) in PairClass::ALL.iter().enumerate() {
            for _ in 0..n_per_class {
                let center = c as f64 * 10.0;
                let v = (0..4).map(|_| center + rng.gen_range(-spread..spread)).collect();
                out.push(fv(out.len(), *class, v));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn prior_rank_orders_by_count_then_class() {
        assert_eq!(prior_rank(&[5, 9, 2]), [1, 0, 2]);
        assert_eq!(prior_rank(&[4, 4, 4]), [0, 1, 2]);
        assert_eq!(argmax_ranked(&[3, 3, 1], &prior_rank(&[1, 2, 0])), 1);
    }

    #[test]
    fn model_file_roundtrip() {
        let data = blobs(20, 3.0, 1);
        let model = ClassifierConfig::RandomForest(ForestConfig { num_trees: 5, ..ForestConfig::default() })
            .train(&data)
            .unwrap();
        let back = Model::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        let bad = model.to_json().replace(MODEL_FORMAT, "other");
        assert!(Model::from_json(&bad).is_err());
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let data = blobs(5, 1.0, 2);
        let model = train_knn(&data, 1).unwrap();
        let wrong = vec![fv(0, PairClass::NormalPair, vec![1.0, 2.0])];
        assert!(matches!(evaluate(&model, &wrong), Err(Error::Shape(_))));
        assert!(evaluate(&model, &[]).is_err());
    }
}
