//! Split-count features: an observed trace is cut into `num_splits` contiguous
//! segments and the monitored events in each segment are counted.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{Observation, ObservedTrace};
use crate::dataset::PairClass;
use crate::dtw::Direction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One count per segment.
    SingleDirectionCounts,
    /// Three counts per segment, laid out as `[all i+1][all j+1][all diagonal]`.
    FullPathCounts,
}

impl Scheme {
    pub fn dimension(self, num_splits: usize) -> usize {
        match self {
            Scheme::SingleDirectionCounts => num_splits,
            Scheme::FullPathCounts => 3 * num_splits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub pair_id: usize,
    pub pair_class: Option<PairClass>,
    pub scheme: Scheme,
    pub num_splits: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Contiguous segments of `len` items, sizes differing by at most one; the
/// first `len % k` segments take the extra item.
pub fn segment_bounds(len: usize, k: usize) -> Vec<Range<usize>> {
    let (base, extra) = (len / k, len % k);
    let mut start = 0;
    (0..k)
        .map(|s| {
            let size = base + usize::from(s < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

pub fn extract(obs: &ObservedTrace, num_splits: usize) -> Result<FeatureVector> {
    let len = obs.payload.len();
    if num_splits == 0 {
        return Err(Error::Config("num_splits must be at least 1".into()));
    }
    if num_splits > len {
        return Err(Error::Config(format!(
            "num_splits {num_splits} exceeds payload length {len}"
        )));
    }
    let bounds = segment_bounds(len, num_splits);
    let (scheme, values) = match &obs.payload {
        Observation::Oracle(dirs) => {
            let mut values = vec![0.0; 3 * num_splits];
            for (s, r) in bounds.iter().enumerate() {
                for &d in &dirs[r.clone()] {
                    values[d.index() * num_splits + s] += 1.0;
                }
            }
            (Scheme::FullPathCounts, values)
        }
        Observation::Single(bits) => (
            Scheme::SingleDirectionCounts,
            bounds
                .iter()
                .map(|r| bits[r.clone()].iter().filter(|&&b| b).count() as f64)
                .collect(),
        ),
        Observation::Noisy(windows) => (
            Scheme::SingleDirectionCounts,
            bounds
                .iter()
                .map(|r| windows[r.clone()].iter().map(|&w| f64::from(w)).sum())
                .collect(),
        ),
    };
    Ok(FeatureVector {
        pair_id: obs.pair_id,
        pair_class: obs.pair_class,
        scheme,
        num_splits,
        values,
    })
}

/// Aggregates a fine vector into `num_splits` coarser segments by summing
/// consecutive groups, so coarse boundaries always align with fine ones.
pub fn coarsen(fv: &FeatureVector, num_splits: usize) -> Result<FeatureVector> {
    if num_splits == 0 || !fv.num_splits.is_multiple_of(num_splits) {
        return Err(Error::Config(format!(
            "cannot coarsen {} splits into {num_splits}",
            fv.num_splits
        )));
    }
    let group = fv.num_splits / num_splits;
    let mut values = Vec::with_capacity(fv.scheme.dimension(num_splits));
    for block in fv.values.chunks(fv.num_splits) {
        values.extend(block.chunks(group).map(|g| g.iter().sum::<f64>()));
    }
    Ok(FeatureVector {
        num_splits,
        values,
        ..fv.clone()
    })
}

/// The single-direction view of a full-path vector: the monitored block only.
pub fn direction_block(fv: &FeatureVector, dir: Direction) -> Result<FeatureVector> {
    if fv.scheme != Scheme::FullPathCounts {
        return Err(Error::Consistency(
            "direction_block needs a FullPathCounts vector".into(),
        ));
    }
    let k = fv.num_splits;
    Ok(FeatureVector {
        scheme: Scheme::SingleDirectionCounts,
        values: fv.values[dir.index() * k..(dir.index() + 1) * k].to_vec(),
        ..fv.clone()
    })
}

fn check_homogeneous(vectors: &[FeatureVector]) -> Result<()> {
    if let Some(first) = vectors.first() {
        for v in vectors {
            if v.scheme != first.scheme || v.num_splits != first.num_splits {
                return Err(Error::Consistency(format!(
                    "mixed feature layouts: {:?}/{} vs {:?}/{}",
                    first.scheme, first.num_splits, v.scheme, v.num_splits
                )));
            }
            if v.values.len() != first.scheme.dimension(first.num_splits) {
                return Err(Error::Consistency(format!(
                    "pair {} has dimension {}",
                    v.pair_id,
                    v.values.len()
                )));
            }
        }
    }
    Ok(())
}

fn fmt_value(out: &mut String, v: f64) {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        let _ = write!(out, "{}", v as i64);
    } else {
        let _ = write!(out, "{v}");
    }
}

/// Renders vectors as CSV with header `pair_class,f_0..f_{d-1}`, rows ordered by pair id.
pub fn features_csv(vectors: &[FeatureVector]) -> Result<String> {
    check_homogeneous(vectors)?;
    let dim = vectors.first().map_or(0, |v| v.values.len());
    let mut out = String::from("pair_class");
    for f in 0..dim {
        let _ = write!(out, ",f_{f}");
    }
    out.push('\n');
    let mut order: Vec<&FeatureVector> = vectors.iter().collect();
    order.sort_by_key(|v| v.pair_id);
    for v in order {
        out.push_str(v.pair_class.map_or("", PairClass::name));
        for &x in &v.values {
            out.push(',');
            fmt_value(&mut out, x);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_features(vectors: &[FeatureVector], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv = features_csv(vectors)?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Reads a feature CSV back. The file does not carry pair ids or layout, so
/// rows are numbered in file order and the caller supplies scheme and split count.
pub fn read_features(
    path: impl AsRef<Path>,
    scheme: Scheme,
    num_splits: usize,
) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dim = scheme.dimension(num_splits);
    let mut out = Vec::new();
    for (row, line) in text.lines().skip(1).enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let class = fields.next().unwrap_or_default();
        let pair_class = if class.is_empty() {
            None
        } else {
            Some(class.parse()?)
        };
        let values = fields
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: row + 2,
                    msg: format!("non-numeric feature `{t}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::Shape(format!(
                "line {} has {} features, expected {dim}",
                row + 2,
                values.len()
            )));
        }
        out.push(FeatureVector {
            pair_id: row,
            pair_class,
            scheme,
            num_splits,
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{observe, ObserverConfig, ObserverKind};
    use crate::dtw::DecisionTrace;
    use proptest::prelude::*;

    fn oracle_obs(s: &str) -> ObservedTrace {
        ObservedTrace {
            pair_id: 0,
            pair_class: Some(PairClass::NormalPair),
            payload: Observation::Oracle(s.chars().map(|c| Direction::from_char(c).unwrap()).collect()),
        }
    }

    fn trace(s: &str) -> DecisionTrace {
        DecisionTrace {
            decisions: s.chars().map(|c| Direction::from_char(c).unwrap()).collect(),
            n: s.len() + 1,
            m: 2,
            pair_class: Some(PairClass::AbnormalPair),
        }
    }

    #[test]
    fn hand_counted_full_path() {
        let fv = extract(&oracle_obs("DDAB"), 2).unwrap();
        assert_eq!(fv.scheme, Scheme::FullPathCounts);
        assert_eq!(fv.values, vec![0.0, 1.0, 0.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn one_split_is_total_counts() {
        let fv = extract(&oracle_obs("DDABDDA"), 1).unwrap();
        assert_eq!(fv.values, vec![2.0, 1.0, 4.0]);
    }

    #[test]
    fn all_false_single_is_zero() {
        let obs = ObservedTrace {
            pair_id: 1,
            pair_class: None,
            payload: Observation::Single(vec![false; 17]),
        };
        let fv = extract(&obs, 5).unwrap();
        assert_eq!(fv.values, vec![0.0; 5]);
        assert_eq!(fv.scheme, Scheme::SingleDirectionCounts);
    }

    #[test]
    fn split_count_errors() {
        assert!(matches!(extract(&oracle_obs("DDA"), 4), Err(Error::Config(_))));
        assert!(matches!(extract(&oracle_obs("DDA"), 0), Err(Error::Config(_))));
    }

    #[test]
    fn ecg_sized_segments() {
        let b = segment_bounds(9801, 100);
        assert_eq!(b[0].len(), 99);
        assert!(b[1..].iter().all(|r| r.len() == 98));
        let b = segment_bounds(101, 100);
        assert_eq!(b[0].len(), 2);
    }

    #[test]
    fn coarse_from_fine_and_direction_blocks() {
        let s = "DDABDBADDDABBBADDAAD";
        let fine = extract(&oracle_obs(s), 10).unwrap();
        let coarse = coarsen(&fine, 5).unwrap();
        assert_eq!(coarse, extract(&oracle_obs(s), 5).unwrap());
        assert!(coarsen(&fine, 3).is_err());

        let t = trace(s);
        for dir in Direction::ALL {
            let single = extract(&observe(&t, 0, &ObserverConfig::single(dir)).unwrap(), 10).unwrap();
            let mut block = direction_block(&fine, dir).unwrap();
            block.pair_class = single.pair_class;
            assert_eq!(block.values, single.values);
        }
    }

    #[test]
    fn csv_layout() {
        let mk = |id, v: Vec<f64>| FeatureVector {
            pair_id: id,
            pair_class: Some(PairClass::HybridPair),
            scheme: Scheme::SingleDirectionCounts,
            num_splits: 2,
            values: v,
        };
        let csv = features_csv(&[mk(2, vec![1.0, 2.0]), mk(0, vec![0.0, 0.5]), mk(1, vec![3.0, 4.0])]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "pair_class,f_0,f_1");
        assert_eq!(lines[1], "hybrid,0,0.5");
        assert_eq!(lines[3], "hybrid,1,2");
        assert_eq!(features_csv(&[]).unwrap(), "pair_class\n");

        let mut other = mk(5, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        other.scheme = Scheme::FullPathCounts;
        assert!(matches!(features_csv(&[mk(0, vec![0.0, 0.0]), other]), Err(Error::Consistency(_))));
    }

    #[test]
    fn export_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let fv = extract(&oracle_obs("DDABDBAD"), 4).unwrap();
        export_features(std::slice::from_ref(&fv), &path).unwrap();
        let back = read_features(&path, Scheme::FullPathCounts, 4).unwrap();
        assert_eq!(back, vec![fv]);
        assert!(matches!(
            export_features(&[], dir.path().join("missing/dir/f.csv")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn partition_property(len in 1usize..5000, k in 1usize..200) {
            prop_assume!(k <= len);
            let b = segment_bounds(len, k);
            prop_assert_eq!(b.len(), k);
            prop_assert_eq!(b.iter().map(|r| r.len()).sum::<usize>(), len);
            let max = b.iter().map(|r| r.len()).max().unwrap();
            let min = b.iter().map(|r| r.len()).min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert!(b.windows(2).all(|w| w[0].end == w[1].start));
        }

        #[test]
        fn full_path_sums_to_trace_length(s in "[ABD]{1,400}", k in 1usize..50) {
            prop_assume!(k <= s.len());
            let fv = extract(&oracle_obs(&s), k).unwrap();
            prop_assert_eq!(fv.dim(), 3 * k);
            prop_assert_eq!(fv.values.iter().sum::<f64>() as usize, s.len());
        }

        #[test]
        fn refinement_consistency(s in "[ABD]{100,600}", seed in any::<u64>()) {
            let t = trace(&s);
            let cfg = ObserverConfig { kind: ObserverKind::Single, seed, ..ObserverConfig::default() };
            let obs = observe(&t, 0, &cfg).unwrap();
            let fine = extract(&obs, 100).unwrap();
            let coarse = coarsen(&fine, 10).unwrap();
            for (g, chunk) in fine.values.chunks(10).enumerate() {
                prop_assert_eq!(coarse.values[g], chunk.iter().sum::<f64>());
            }
            prop_assert_eq!(coarse.values.iter().sum::<f64>(), fine.values.iter().sum::<f64>());
        }
    }
}
