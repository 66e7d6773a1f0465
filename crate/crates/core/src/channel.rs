//! Observer models: what a cache-timing attacker recovers from a decision trace.
//!
//! * `Oracle` sees every decision (upper bound, equivalent to instrumenting the victim).
//! * `SingleDirection` sees one code line only: a hit/no-hit bit per decision.
//! * `NoisySingleDirection` probes once per `probe_period` cells and reports hit
//!   counts per window; true events can be missed and spurious hits appear.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairClass;
use crate::dtw::{DecisionTrace, Direction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObserverKind {
    Oracle,
    Single,
    Noisy,
}

impl ObserverKind {
    pub fn name(self) -> &'static str {
        match self {
            ObserverKind::Oracle => "oracle",
            ObserverKind::Single => "single",
            ObserverKind::Noisy => "noisy",
        }
    }
}

impl fmt::Display for ObserverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObserverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ObserverKind::Oracle),
            "single" => Ok(ObserverKind::Single),
            "noisy" => Ok(ObserverKind::Noisy),
            other => Err(Error::Config(format!("unknown observer kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub kind: ObserverKind,
    pub monitored: Direction,
    /// DP cells covered by one probe window.
    pub probe_period: usize,
    pub miss_rate: f64,
    pub spurious_rate: f64,
    pub seed: u64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            kind: ObserverKind::Noisy,
            monitored: Direction::Diagonal,
            probe_period: 98,
            miss_rate: 0.05,
            spurious_rate: 0.01,
            seed: 42,
        }
    }
}

impl ObserverConfig {
    pub fn oracle() -> Self {
        ObserverConfig {
            kind: ObserverKind::Oracle,
            ..Default::default()
        }
    }

    pub fn single(monitored: Direction) -> Self {
        ObserverConfig {
            kind: ObserverKind::Single,
            monitored,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probe_period == 0 {
            return Err(Error::Config("probe_period must be at least 1".into()));
        }
        for (name, rate) in [("miss_rate", self.miss_rate), ("spurious_rate", self.spurious_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    Oracle(Vec<Direction>),
    Single(Vec<bool>),
    Noisy(Vec<u32>),
}

impl Observation {
    pub fn kind(&self) -> ObserverKind {
        match self {
            Observation::Oracle(_) => ObserverKind::Oracle,
            Observation::Single(_) => ObserverKind::Single,
            Observation::Noisy(_) => ObserverKind::Noisy,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Observation::Oracle(d) => d.len(),
            Observation::Single(b) => b.len(),
            Observation::Noisy(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn payload_string(&self) -> String {
        match self {
            Observation::Oracle(d) => d.iter().map(|d| d.as_char()).collect(),
            Observation::Single(b) => b.iter().map(|&x| if x { '1' } else { '0' }).collect(),
            Observation::Noisy(w) => w
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    pub fn parse_payload(kind: ObserverKind, payload: &str) -> Result<Observation> {
        let bad = |what: &str| Error::Domain(format!("invalid {what} payload symbol"));
        Ok(match kind {
            ObserverKind::Oracle => Observation::Oracle(
                payload
                    .chars()
                    .map(|c| Direction::from_char(c).ok_or_else(|| bad("oracle")))
                    .collect::<Result<_>>()?,
            ),
            ObserverKind::Single => Observation::Single(
                payload
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(bad("single")),
                    })
                    .collect::<Result<_>>()?,
            ),
            ObserverKind::Noisy if payload.is_empty() => Observation::Noisy(Vec::new()),
            ObserverKind::Noisy => Observation::Noisy(
                payload
                    .split(';')
                    .map(|t| t.parse::<u32>().map_err(|_| bad("noisy")))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedTrace {
    pub pair_id: usize,
    pub pair_class: Option<PairClass>,
    pub payload: Observation,
}

impl ObservedTrace {
    /// One `pair_id,pair_class,kind,payload` CSV record (no trailing newline).
    pub fn to_csv_record(&self) -> String {
        format!(
            "{},{},{},{}",
            self.pair_id,
            self.pair_class.map_or("", PairClass::name),
            self.payload.kind(),
            self.payload.payload_string()
        )
    }

    pub fn from_csv_record(line: &str) -> Result<ObservedTrace> {
        let mut parts = line.splitn(4, ',');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| Error::Shape(format!("observed-trace record missing `{name}`")))
        };
        let pair_id = field("pair_id")?
            .parse::<usize>()
            .map_err(|_| Error::Shape("bad pair_id".into()))?;
        let class = field("pair_class")?;
        let pair_class = if class.is_empty() {
            None
        } else {
            Some(class.parse()?)
        };
        let kind: ObserverKind = field("kind")?.parse()?;
        let payload = Observation::parse_payload(kind, field("payload")?)?;
        Ok(ObservedTrace {
            pair_id,
            pair_class,
            payload,
        })
    }
}

pub const OBSERVED_CSV_HEADER: &str = "pair_id,pair_class,kind,payload";

/// Number of probe windows covering `len` decisions.
pub fn window_count(len: usize, probe_period: usize) -> usize {
    len.div_ceil(probe_period)
}

/// Independent RNG stream for one pair, so results do not depend on scheduling.
pub fn pair_rng(seed: u64, pair_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_id as u64);
    rng
}

pub fn observe(trace: &DecisionTrace, pair_id: usize, cfg: &ObserverConfig) -> Result<ObservedTrace> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::Domain("cannot observe an empty decision trace".into()));
    }
    let payload = match cfg.kind {
        ObserverKind::Oracle => Observation::Oracle(trace.decisions.clone()),
        ObserverKind::Single => Observation::Single(
            trace.decisions.iter().map(|&d| d == cfg.monitored).collect(),
        ),
        ObserverKind::Noisy => {
            let mut rng = pair_rng(cfg.seed, pair_id);
            let keep = 1.0 - cfg.miss_rate;
            let cap = cfg.probe_period as u32;
            let windows = trace
                .decisions
                .chunks(cfg.probe_period)
                .map(|window| {
                    let mut hits = 0u32;
                    for &d in window {
                        if d == cfg.monitored && rng.gen_bool(keep) {
                            hits += 1;
                        }
                    }
                    if rng.gen_bool(cfg.spurious_rate) {
                        hits += 1;
                    }
                    hits.min(cap)
                })
                .collect();
            Observation::Noisy(windows)
        }
    };
    Ok(ObservedTrace {
        pair_id,
        pair_class: trace.pair_class,
        payload,
    })
}

/// What the observer records from a victim with no decision-dependent code path.
///
/// The monitored line is the shared selection routine, executed once per interior
/// cell regardless of the data, so every pair of a given shape yields the same payload.
pub fn observe_decision_free(
    n: usize,
    m: usize,
    pair_id: usize,
    pair_class: Option<PairClass>,
    cfg: &ObserverConfig,
) -> Result<ObservedTrace> {
    cfg.validate()?;
    let cells = crate::dtw::interior_cells(n, m);
    if cells == 0 {
        return Err(Error::Domain("cannot observe an empty decision trace".into()));
    }
    let payload = match cfg.kind {
        ObserverKind::Oracle => Observation::Oracle(vec![Direction::Diagonal; cells]),
        ObserverKind::Single => Observation::Single(vec![true; cells]),
        ObserverKind::Noisy => Observation::Noisy(
            (0..window_count(cells, cfg.probe_period))
                .map(|w| (cells - w * cfg.probe_period).min(cfg.probe_period) as u32)
                .collect(),
        ),
    };
    Ok(ObservedTrace {
        pair_id,
        pair_class,
        payload,
    })
}
