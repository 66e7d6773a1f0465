//! Random forest of unpruned CART trees with Gini splits.
//!
//! Each tree is grown on a bootstrap resample. At every node a random subset of
//! `features_per_split` candidate features is scored; if none of them yields a
//! positive impurity decrease the remaining features are tried in the same
//! random order before the node is made a leaf.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_ranked, prior_rank, Classifier, Matrix};
use crate::dataset::PairClass;
use crate::error::{Error, Result};

const K: usize = PairClass::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    /// `None` means `floor(sqrt(d)) + 1`, capped at `d`.
    pub features_per_split: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 100,
            max_depth: None,
            features_per_split: None,
            min_leaf: 1,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn resolved_features_per_split(&self, dim: usize) -> Result<usize> {
        match self.features_per_split {
            None => Ok(((dim as f64).sqrt().floor() as usize + 1).min(dim)),
            Some(k) if k == 0 || k > dim => Err(Error::Config(format!(
                "features_per_split {k} must be in 1..={dim}"
            ))),
            Some(k) => Ok(k),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::Config("num_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Node {
    Leaf { class: u8 },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class as usize,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature as usize] < threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    config: ForestConfig,
    dim: usize,
    /// Tie-break order derived from training class counts.
    rank: [usize; K],
    trees: Vec<Tree>,
}

/// Column-major copy of the training data plus growth parameters.
struct Columns<'a> {
    n: usize,
    d: usize,
    cols: Vec<f64>,
    labels: &'a [u8],
    /// All values are small nonnegative integers, so histogram split search applies.
    integral: bool,
}

impl RandomForest {
    pub(crate) fn fit(m: &Matrix, cfg: &ForestConfig) -> Result<RandomForest> {
        cfg.validate()?;
        let mtry = cfg.resolved_features_per_split(m.cols)?;
        let mut cols = vec![0.0; m.rows * m.cols];
        for r in 0..m.rows {
            for c in 0..m.cols {
                cols[c * m.rows + r] = m.at(r, c);
            }
        }
        let integral = cols
            .iter()
            .all(|&v| v >= 0.0 && v < (1u64 << 31) as f64 && v.fract() == 0.0);
        let data = Columns {
            n: m.rows,
            d: m.cols,
            cols,
            labels: &m.labels,
            integral,
        };
        let rank = prior_rank(&m.class_counts());
        let trees = (0..cfg.num_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                Grower::new(&data, cfg, mtry, rank, rng).grow()
            })
            .collect();
        Ok(RandomForest {
            config: *cfg,
            dim: m.cols,
            rank,
            trees,
        })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Vote tally per class.
    pub fn votes(&self, x: &[f64]) -> [usize; K] {
        let mut votes = [0usize; K];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        votes
    }
}

impl Classifier for RandomForest {
    fn predict(&self, x: &[f64]) -> PairClass {
        let class = argmax_ranked(&self.votes(x), &self.rank);
        PairClass::from_index(class).expect("class index in range")
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

struct Grower<'a> {
    data: &'a Columns<'a>,
    cfg: &'a ForestConfig,
    mtry: usize,
    rank: [usize; K],
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    features: Vec<usize>,
    hist: Vec<[u32; K]>,
    sorted: Vec<(f64, u8)>,
}

impl<'a> Grower<'a> {
    fn new(data: &'a Columns<'a>, cfg: &'a ForestConfig, mtry: usize, rank: [usize; K], rng: ChaCha8Rng) -> Self {
        Grower {
            data,
            cfg,
            mtry,
            rank,
            rng,
            nodes: Vec::new(),
            features: (0..data.d).collect(),
            hist: Vec::new(),
            sorted: Vec::new(),
        }
    }

    fn grow(mut self) -> Tree {
        let n = self.data.n;
        let mut idx: Vec<u32> = (0..n).map(|_| self.rng.gen_range(0..n) as u32).collect();
        self.nodes.push(Node::Leaf { class: 0 });
        let mut stack = vec![(0usize, 0usize, n, 0usize)];
        while let Some((node, start, end, depth)) = stack.pop() {
            let rows = &mut idx[start..end];
            let mut counts = [0usize; K];
            for &r in rows.iter() {
                counts[self.data.labels[r as usize] as usize] += 1;
            }
            let leaf = Node::Leaf {
                class: argmax_ranked(&counts, &self.rank) as u8,
            };
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
            if pure || depth_capped || rows.len() < 2 * self.cfg.min_leaf {
                self.nodes[node] = leaf;
                continue;
            }
            let Some(best) = self.best_split(rows, &counts) else {
                self.nodes[node] = leaf;
                continue;
            };
            let col = &self.data.cols[best.feature * self.data.n..(best.feature + 1) * self.data.n];
            let mut mid = 0;
            for i in 0..rows.len() {
                if col[rows[i] as usize] < best.threshold {
                    rows.swap(i, mid);
                    mid += 1;
                }
            }
            if mid == 0 || mid == rows.len() {
                self.nodes[node] = leaf;
                continue;
            }
            let left = self.nodes.len();
            self.nodes.push(Node::Leaf { class: 0 });
            self.nodes.push(Node::Leaf { class: 0 });
            self.nodes[node] = Node::Split {
                feature: best.feature as u32,
                threshold: best.threshold,
                left: left as u32,
                right: left as u32 + 1,
            };
            stack.push((left + 1, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        Tree { nodes: self.nodes }
    }

    fn best_split(&mut self, rows: &[u32], counts: &[usize; K]) -> Option<Candidate> {
        let n = rows.len() as f64;
        let parent = counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n;
        let mut best: Option<Candidate> = None;
        let d = self.data.d;
        for i in 0..d {
            let j = self.rng.gen_range(i..d);
            self.features.swap(i, j);
            let f = self.features[i];
            if let Some((score, threshold)) = self.score_feature(f, rows, counts) {
                if score > parent * (1.0 + 1e-12) && best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Candidate {
                        score,
                        feature: f,
                        threshold,
                    });
                }
            }
            if i + 1 >= self.mtry && best.is_some() {
                break;
            }
        }
        best
    }

    /// Best `sum(left^2)/nl + sum(right^2)/nr` over thresholds of feature `f`
    /// (maximizing it minimizes weighted Gini impurity).
    fn score_feature(&mut self, f: usize, rows: &[u32], counts: &[usize; K]) -> Option<(f64, f64)> {
        let col = &self.data.cols[f * self.data.n..(f + 1) * self.data.n];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in rows {
            let v = col[r as usize];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            return None;
        }
        let min_leaf = self.cfg.min_leaf;
        let total = rows.len();
        let mut scan = Scan::new(counts, total, min_leaf);

        if self.data.integral && (hi - lo) as usize <= 4 * rows.len() + 16 {
            let base = lo as usize;
            let span = (hi - lo) as usize + 1;
            self.hist.clear();
            self.hist.resize(span, [0; K]);
            for &r in rows {
                let b = col[r as usize] as usize - base;
                self.hist[b][self.data.labels[r as usize] as usize] += 1;
            }
            for (b, h) in self.hist.iter().enumerate() {
                let size = h.iter().sum::<u32>() as usize;
                if size > 0 {
                    scan.push((base + b) as f64, h.map(|c| c as usize), size);
                }
            }
        } else {
            self.sorted.clear();
            self.sorted
                .extend(rows.iter().map(|&r| (col[r as usize], self.data.labels[r as usize])));
            self.sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut i = 0;
            while i < self.sorted.len() {
                let v = self.sorted[i].0;
                let mut group = [0usize; K];
                let mut size = 0;
                while i < self.sorted.len() && self.sorted[i].0 == v {
                    group[self.sorted[i].1 as usize] += 1;
                    size += 1;
                    i += 1;
                }
                scan.push(v, group, size);
            }
        }
        scan.best
    }
}

/// Left-to-right sweep over value groups in ascending order.
struct Scan {
    total: [usize; K],
    n: usize,
    min_leaf: usize,
    left: [usize; K],
    nl: usize,
    prev: Option<f64>,
    best: Option<(f64, f64)>,
}

impl Scan {
    fn new(total: &[usize; K], n: usize, min_leaf: usize) -> Self {
        Scan {
            total: *total,
            n,
            min_leaf,
            left: [0; K],
            nl: 0,
            prev: None,
            best: None,
        }
    }

    #[inline]
    fn push(&mut self, value: f64, group: [usize; K], size: usize) {
        if let Some(prev) = self.prev {
            let nr = self.n - self.nl;
            if self.nl >= self.min_leaf && nr >= self.min_leaf {
                let mut sl = 0.0;
                let mut sr = 0.0;
                for c in 0..K {
                    let l = self.left[c] as f64;
                    let r = (self.total[c] - self.left[c]) as f64;
                    sl += l * l;
                    sr += r * r;
                }
                let score = sl / self.nl as f64 + sr / nr as f64;
                if self.best.is_none_or(|(s, _)| score > s) {
                    let mut threshold = prev + (value - prev) / 2.0;
                    if threshold <= prev {
                        threshold = value;
                    }
                    self.best = Some((score, threshold));
                }
            }
        }
        for c in 0..K {
            self.left[c] += group[c];
        }
        self.nl += size;
        self.prev = Some(value);
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{evaluate, train_random_forest};
    use super::*;

    fn small(trees: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            num_trees: trees,
            seed,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn default_features_per_split() {
        let cfg = ForestConfig::default();
        assert_eq!(cfg.resolved_features_per_split(300).unwrap(), 18);
        assert_eq!(cfg.resolved_features_per_split(100).unwrap(), 11);
        assert_eq!(cfg.resolved_features_per_split(3).unwrap(), 2);
        assert_eq!(cfg.resolved_features_per_split(1).unwrap(), 1);
        let too_many = ForestConfig {
            features_per_split: Some(5),
            ..cfg
        };
        assert!(too_many.resolved_features_per_split(4).is_err());
    }

    #[test]
    fn single_class_is_constant() {
        let data: Vec<_> = (0..12)
            .map(|i| fv(i, PairClass::AbnormalPair, vec![i as f64, 1.0]))
            .collect();
        let rf = train_random_forest(&data, &small(7, 3)).unwrap();
        for x in [[0.0, 0.0], [100.0, -5.0], [3.5, 1.0]] {
            assert_eq!(rf.predict(&x), PairClass::AbnormalPair);
        }
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let data = blobs(30, 2.0, 11);
        let rf = train_random_forest(&data, &small(10, 5)).unwrap();
        assert_eq!(evaluate(&rf, &data).unwrap().overall_success, 1.0);
    }

    #[test]
    fn float_features_use_sorted_scan() {
        let data: Vec<_> = (0..60)
            .map(|i| {
                let x = i as f64 * 0.37 + 0.01;
                let class = if x < 7.3 { PairClass::NormalPair } else { PairClass::HybridPair };
                fv(i, class, vec![x, (i % 7) as f64 * 0.5])
            })
            .collect();
        let rf = train_random_forest(&data, &small(15, 9)).unwrap();
        assert_eq!(evaluate(&rf, &data).unwrap().overall_success, 1.0);
        assert_eq!(rf.predict(&[0.5, 0.0]), PairClass::NormalPair);
        assert_eq!(rf.predict(&[20.0, 0.0]), PairClass::HybridPair);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = blobs(40, 8.0, 4);
        let a = train_random_forest(&data, &small(9, 21)).unwrap();
        let b = train_random_forest(&data, &small(9, 21)).unwrap();
        assert_eq!(a, b);
        let c = train_random_forest(&data, &small(9, 22)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thread_count_does_not_change_model() {
        let data = blobs(40, 8.0, 4);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_random_forest(&data, &small(12, 2)).unwrap());
        let b = four.install(|| train_random_forest(&data, &small(12, 2)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn depth_and_leaf_limits() {
        let data = blobs(40, 8.0, 6);
        let stump = train_random_forest(
            &data,
            &ForestConfig {
                max_depth: Some(1),
                ..small(3, 1)
            },
        )
        .unwrap();
        assert!(stump.trees().iter().all(|t| t.node_count() <= 3));
        assert!(train_random_forest(&data, &ForestConfig { min_leaf: 0, ..small(1, 1) }).is_err());
        assert!(train_random_forest(&data, &ForestConfig { num_trees: 0, ..small(1, 1) }).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut data = blobs(5, 1.0, 1);
        data[3].values.push(1.0);
        assert!(matches!(train_random_forest(&data, &small(2, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn training_accuracy_at_least_test_accuracy() {
        use super::super::{split_dataset, SplitSpec};
        let mut gap = 0.0;
        for seed in 0..5 {
            let data = blobs(60, 12.0, 100 + seed);
            let (train, test) = split_dataset(&data, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
            let rf = train_random_forest(&train, &small(20, seed)).unwrap();
            gap += evaluate(&rf, &train).unwrap().overall_success - evaluate(&rf, &test).unwrap().overall_success;
        }
        assert!(gap >= 0.0, "mean train-test gap {}", gap / 5.0);
    }
}
