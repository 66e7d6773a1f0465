//! Unconstrained DTW with squared-difference local cost.
//!
//! [`dtw_traced`] is the victim implementation: every interior cell of the DP
//! grid takes a data-dependent three-way branch, and the branch taken is
//! recorded as a [`Direction`]. That per-cell decision sequence is what a
//! cache observer can recover from the victim's instruction fetches.
//!
//! [`dtw_oblivious`] computes the same accumulated cost with branch-free
//! minimum selection, so the executed operations and the cells it touches
//! depend only on the sequence lengths.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledSeries, PairClass};
use crate::error::{Error, Result};

/// Predecessor chosen for a DP cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Direction {
    /// `i+1`: came from `(i-1, j)`.
    AdvanceI = 0,
    /// `j+1`: came from `(i, j-1)`.
    AdvanceJ = 1,
    /// `i+1&j+1`: came from `(i-1, j-1)`.
    Diagonal = 2,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::AdvanceI, Direction::AdvanceJ, Direction::Diagonal];

    pub fn as_char(self) -> char {
        match self {
            Direction::AdvanceI => 'A',
            Direction::AdvanceJ => 'B',
            Direction::Diagonal => 'D',
        }
    }

    pub fn from_char(c: char) -> Option<Direction> {
        match c {
            'A' => Some(Direction::AdvanceI),
            'B' => Some(Direction::AdvanceJ),
            'D' => Some(Direction::Diagonal),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AdvanceI => "i+1",
            Direction::AdvanceJ => "j+1",
            Direction::Diagonal => "i+1&j+1",
        })
    }
}

/// Accumulated cost grid, row-major, `n` rows by `m` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub n: usize,
    pub m: usize,
    pub gamma: Vec<f64>,
}

impl CostMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.m + j]
    }
}

/// Per-cell decisions of one DTW run in row-major order over interior cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTrace {
    pub decisions: Vec<Direction>,
    pub n: usize,
    pub m: usize,
    /// Ground truth, attached for training only.
    pub pair_class: Option<PairClass>,
}

impl DecisionTrace {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn to_trace_string(&self) -> String {
        self.decisions.iter().map(|d| d.as_char()).collect()
    }

    pub fn from_trace_string(s: &str, n: usize, m: usize) -> Result<DecisionTrace> {
        let decisions = s
            .chars()
            .map(|c| {
                Direction::from_char(c)
                    .ok_or_else(|| Error::Domain(format!("invalid direction symbol `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = interior_cells(n, m);
        if decisions.len() != expected {
            return Err(Error::Shape(format!(
                "trace has {} decisions, expected {expected} for {n}x{m}",
                decisions.len()
            )));
        }
        Ok(DecisionTrace {
            decisions,
            n,
            m,
            pair_class: None,
        })
    }

    /// Decision recorded for interior cell `(i, j)`, `i, j >= 1`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Direction {
        self.decisions[(i - 1) * (self.m - 1) + (j - 1)]
    }
}

/// Number of cells with a three-way choice: `(n-1)(m-1)`.
pub fn interior_cells(n: usize, m: usize) -> usize {
    n.saturating_sub(1) * m.saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks endpoints and that each step moves by (1,0), (0,1) or (1,1).
    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.steps.first(), self.steps.last()) else {
            return false;
        };
        first == (0, 0)
            && last == (n - 1, m - 1)
            && self.steps.windows(2).all(|w| {
                let di = w[1].0.wrapping_sub(w[0].0);
                let dj = w[1].1.wrapping_sub(w[0].1);
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }

    /// Replays the accumulation along the path in the order the DP performed it.
    pub fn cost(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, &(i, j)) in self.steps.iter().enumerate() {
            let d = a[i] - b[j];
            acc = if k == 0 { d * d } else { d * d + acc };
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Accumulated squared cost at the last cell (no square root).
    pub distance: f64,
    pub trace: DecisionTrace,
    pub path: AlignmentPath,
    pub cost: CostMatrix,
}

fn check_operands(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("DTW operand is empty".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("DTW operand has a non-finite value".into()));
    }
    Ok(())
}

/// Victim-style selection: `i+1` on strict win, then `j+1` on strict win, else diagonal.
///
/// The one case where the plain fall-through would not pick a minimum (`up == left < diag`)
/// resolves to `AdvanceI` so the recurrence stays exact.
#[inline]
fn choose(up: f64, left: f64, diag: f64) -> (Direction, f64) {
    if up < diag && up < left {
        (Direction::AdvanceI, up)
    } else if left < up && left < diag {
        (Direction::AdvanceJ, left)
    } else if diag <= up && diag <= left {
        (Direction::Diagonal, diag)
    } else {
        (Direction::AdvanceI, up)
    }
}

/// Fills the DP grid row-major, recording one decision per interior cell.
pub fn dtw_traced(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    check_operands(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut gamma = vec![0.0f64; n * m];
    let mut decisions = Vec::with_capacity(interior_cells(n, m));

    let d0 = a[0] - b[0];
    gamma[0] = d0 * d0;
    for j in 1..m {
        let d = a[0] - b[j];
        gamma[j] = d * d + gamma[j - 1];
    }
    for i in 1..n {
        let row = i * m;
        let prev = row - m;
        let d = a[i] - b[0];
        gamma[row] = d * d + gamma[prev];
        for j in 1..m {
            let d = a[i] - b[j];
            let (dir, best) = choose(gamma[prev + j], gamma[row + j - 1], gamma[prev + j - 1]);
            decisions.push(dir);
            gamma[row + j] = d * d + best;
        }
    }

    let trace = DecisionTrace {
        decisions,
        n,
        m,
        pair_class: None,
    };
    let path = backtrack(&trace);
    Ok(DtwResult {
        distance: gamma[n * m - 1],
        trace,
        path,
        cost: CostMatrix { n, m, gamma },
    })
}

/// Recovers the alignment path by following recorded decisions back from `(n-1, m-1)`.
/// Boundary cells have a forced predecessor.
pub fn backtrack(trace: &DecisionTrace) -> AlignmentPath {
    let (mut i, mut j) = (trace.n - 1, trace.m - 1);
    let mut steps = vec![(i, j)];
    while (i, j) != (0, 0) {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            match trace.at(i, j) {
                Direction::AdvanceI => i -= 1,
                Direction::AdvanceJ => j -= 1,
                Direction::Diagonal => {
                    i -= 1;
                    j -= 1;
                }
            }
        }
        steps.push((i, j));
    }
    steps.reverse();
    AlignmentPath { steps }
}

/// Observer hook for the oblivious kernel. Receives every grid slot touched and
/// every arithmetic step, in execution order.
pub trait Probe {
    fn touch(&mut self, slot: usize);
    fn op(&mut self);
}

impl Probe for () {
    #[inline(always)]
    fn touch(&mut self, _slot: usize) {}
    #[inline(always)]
    fn op(&mut self) {}
}

/// Counts operations and fingerprints the memory-touch sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpProfile {
    pub ops: u64,
    pub touches: u64,
    /// FNV-1a over the ordered slot indices.
    pub touch_digest: u64,
}

impl OpProfile {
    pub fn new() -> Self {
        OpProfile {
            ops: 0,
            touches: 0,
            touch_digest: 0xcbf2_9ce4_8422_2325,
        }
    }
}

impl Probe for OpProfile {
    fn touch(&mut self, slot: usize) {
        self.touches += 1;
        for byte in (slot as u64).to_le_bytes() {
            self.touch_digest ^= u64::from(byte);
            self.touch_digest = self.touch_digest.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn op(&mut self) {
        self.ops += 1;
    }
}

/// Branch-free minimum of two nonnegative finite doubles.
///
/// Nonnegative IEEE-754 doubles order the same way as their bit patterns, and
/// those patterns fit in 63 bits, so the sign of the signed difference is the
/// comparison result.
#[inline(always)]
fn ct_min(x: f64, y: f64) -> f64 {
    let (xb, yb) = (x.to_bits(), y.to_bits());
    let mask = (((xb as i64).wrapping_sub(yb as i64)) >> 63) as u64;
    let mask = std::hint::black_box(mask);
    f64::from_bits(yb ^ ((xb ^ yb) & mask))
}

/// DTW distance without data-dependent control flow or addressing.
pub fn dtw_oblivious(a: &[f64], b: &[f64]) -> Result<f64> {
    dtw_oblivious_probed(a, b, &mut ())
}

pub fn dtw_oblivious_probed<P: Probe>(a: &[f64], b: &[f64], probe: &mut P) -> Result<f64> {
    check_operands(a, b)?;
    let (n, m) = (a.len(), b.len());
    // Two rolling rows; `prev` holds row i-1.
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];

    let d0 = a[0] - b[0];
    prev[0] = d0 * d0;
    probe.touch(0);
    probe.op();
    for j in 1..m {
        let d = a[0] - b[j];
        prev[j] = d * d + prev[j - 1];
        probe.touch(j - 1);
        probe.touch(j);
        probe.op();
    }
    for i in 1..n {
        let ai = a[i];
        let d = ai - b[0];
        cur[0] = d * d + prev[0];
        probe.touch(0);
        probe.touch(m);
        probe.op();
        for j in 1..m {
            let d = ai - b[j];
            let best = ct_min(ct_min(prev[j], cur[j - 1]), prev[j - 1]);
            cur[j] = d * d + best;
            probe.touch(j);
            probe.touch(m + j - 1);
            probe.touch(j - 1);
            probe.touch(m + j);
            probe.op();
            probe.op();
            probe.op();
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Output of the victim classifier, including the trace of every DTW run it made.
#[derive(Debug, Clone)]
pub struct VictimOutput {
    pub label: Label,
    pub nearest: usize,
    pub distance: f64,
    pub traces: Vec<DecisionTrace>,
}

/// 1-NN DTW classification. Ties go to the lowest reference index.
pub fn victim_classify_1nn(
    query: &LabeledSeries,
    references: &[LabeledSeries],
) -> Result<VictimOutput> {
    if references.is_empty() {
        return Err(Error::Domain("victim has no reference samples".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut traces = Vec::with_capacity(references.len());
    for (idx, r) in references.iter().enumerate() {
        let res = dtw_traced(&query.values, &r.values)?;
        if best.is_none_or(|(_, d)| res.distance < d) {
            best = Some((idx, res.distance));
        }
        let mut trace = res.trace;
        trace.pair_class = Some(PairClass::of(query.label, r.label));
        traces.push(trace);
    }
    let (nearest, distance) = best.expect("references non-empty");
    Ok(VictimOutput {
        label: references[nearest].label,
        nearest,
        distance,
        traces,
    })
}
