use serde::{Deserialize, Serialize};

use super::{Classifier, Matrix};
use crate::dataset::PairClass;
use crate::error::{Error, Result};

const K: usize = PairClass::COUNT;

/// Lazy Euclidean k-nearest-neighbour classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    dim: usize,
    data: Vec<f64>,
    labels: Vec<u8>,
}

impl Knn {
    pub(crate) fn fit(m: Matrix, k: usize) -> Result<Knn> {
        if k == 0 || k > m.rows {
            return Err(Error::Config(format!("k = {k} must be in 1..={}", m.rows)));
        }
        Ok(Knn {
            k,
            dim: m.cols,
            data: m.data,
            labels: m.labels,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The `k` nearest stored rows as `(squared distance, index)`, nearest first.
    /// Equal distances order by stored index.
    pub fn neighbours(&self, x: &[f64]) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = self
            .data
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| {
                let d: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < all.len() {
            all.select_nth_unstable_by(self.k - 1, cmp);
            all.truncate(self.k);
        }
        all.sort_unstable_by(cmp);
        all
    }
}

impl Classifier for Knn {
    /// Majority vote; a tied vote goes to the tied class with the nearest member.
    fn predict(&self, x: &[f64]) -> PairClass {
        let nn = self.neighbours(x);
        let mut votes = [0usize; K];
        for &(_, i) in &nn {
            votes[self.labels[i] as usize] += 1;
        }
        let top = *votes.iter().max().expect("k >= 1");
        let class = nn
            .iter()
            .map(|&(_, i)| self.labels[i] as usize)
            .find(|&c| votes[c] == top)
            .expect("some neighbour holds the top vote");
        PairClass::from_index(class).expect("class index in range")
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{evaluate, train_knn};
    use super::*;

    #[test]
    fn k1_returns_class_of_identical_vector() {
        let data = blobs(10, 20.0, 3);
        let knn = train_knn(&data, 1).unwrap();
        for v in &data {
            assert_eq!(knn.predict(&v.values), v.pair_class.unwrap());
        }
    }

    #[test]
    fn k_all_is_global_majority() {
        let mut data = blobs(4, 1.0, 3);
        data.push(fv(99, PairClass::HybridPair, vec![0.0; 4]));
        let knn = train_knn(&data, data.len()).unwrap();
        for x in [[0.0; 4], [10.0; 4], [100.0; 4]] {
            assert_eq!(knn.predict(&x), PairClass::HybridPair);
        }
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let data = vec![
            fv(0, PairClass::AbnormalPair, vec![1.0]),
            fv(1, PairClass::NormalPair, vec![-1.0]),
        ];
        let knn = train_knn(&data, 1).unwrap();
        assert_eq!(knn.predict(&[0.0]), PairClass::AbnormalPair);
        assert_eq!(knn.neighbours(&[0.0]), vec![(1.0, 0)]);
    }

    #[test]
    fn k_out_of_range() {
        let data = blobs(2, 1.0, 1);
        assert!(matches!(train_knn(&data, 0), Err(Error::Config(_))));
        assert!(matches!(train_knn(&data, 7), Err(Error::Config(_))));
    }

    #[test]
    fn subset_test_is_perfect_with_k1() {
        let data = blobs(25, 15.0, 8);
        let knn = train_knn(&data, 1).unwrap();
        assert_eq!(evaluate(&knn, &data[10..40]).unwrap().overall_success, 1.0);
    }
}
