//! UCR-format ingestion and enumeration of the sample pairs fed to the victim.
//!
//! A UCR file holds one sample per line: an integer class label followed by the
//! sample values, separated by TABs (2018 archive) or commas (older exports).
//! Binary ECG datasets use `1` for normal and `-1` for abnormal beats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnosis attached to a single ECG sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn from_ucr(value: i64) -> Option<Label> {
        match value {
            1 => Some(Label::Normal),
            -1 => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "n" => Ok(Label::Normal),
            "abnormal" | "a" => Ok(Label::Abnormal),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

/// One ECG sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    /// 0-based line number within the source file (or position after [`concat`]).
    pub id: usize,
    pub label: Label,
    pub values: Vec<f64>,
}

impl LabeledSeries {
    pub fn new(id: usize, label: Label, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain(format!("series {id} is empty")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "series {id} has a non-finite value at position {pos}"
            )));
        }
        Ok(Self { id, label, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Class of a DTW input pair, the attacker's prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairClass {
    #[serde(rename = "normal")]
    NormalPair,
    #[serde(rename = "abnormal")]
    AbnormalPair,
    #[serde(rename = "hybrid")]
    HybridPair,
}

impl PairClass {
    pub const COUNT: usize = 3;
    pub const ALL: [PairClass; 3] = [
        PairClass::NormalPair,
        PairClass::AbnormalPair,
        PairClass::HybridPair,
    ];

    pub fn of(a: Label, b: Label) -> PairClass {
        match (a, b) {
            (Label::Normal, Label::Normal) => PairClass::NormalPair,
            (Label::Abnormal, Label::Abnormal) => PairClass::AbnormalPair,
            _ => PairClass::HybridPair,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<PairClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PairClass::NormalPair => "normal",
            PairClass::AbnormalPair => "abnormal",
            PairClass::HybridPair => "hybrid",
        }
    }
}

impl fmt::Display for PairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(PairClass::NormalPair),
            "abnormal" => Ok(PairClass::AbnormalPair),
            "hybrid" => Ok(PairClass::HybridPair),
            other => Err(Error::Config(format!("unknown pair class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePair {
    pub index_a: usize,
    pub index_b: usize,
    pub class: PairClass,
}

/// All unordered pairs of distinct samples, in lexicographic `(index_a, index_b)` order.
/// The position of a pair in `pairs` is its `pair_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<SamplePair>,
    pub source: String,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs per class, indexed by [`PairClass::index`].
    pub fn class_counts(&self) -> [usize; PairClass::COUNT] {
        let mut counts = [0; PairClass::COUNT];
        for p in &self.pairs {
            counts[p.class.index()] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Separator {
    Tab,
    Comma,
    Whitespace,
}

impl Separator {
    fn detect(line: &str) -> Separator {
        if line.contains('\t') {
            Separator::Tab
        } else if line.contains(',') {
            Separator::Comma
        } else {
            Separator::Whitespace
        }
    }

    fn split<'a>(self, line: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            Separator::Tab => Box::new(line.split('\t').map(str::trim)),
            Separator::Comma => Box::new(line.split(',').map(str::trim)),
            Separator::Whitespace => Box::new(line.split_whitespace()),
        }
    }
}

fn parse_label(token: &str, line: usize) -> Result<Label> {
    // Older archive exports write labels as floats ("-1.0000000e+00").
    let value = match token.parse::<i64>() {
        Ok(v) => v,
        Err(_) => {
            let f = token.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric label token `{token}`"),
            })?;
            if f.fract() != 0.0 || !f.is_finite() {
                return Err(Error::Label {
                    line,
                    value: token.to_string(),
                });
            }
            f as i64
        }
    };
    Label::from_ucr(value).ok_or_else(|| Error::Label {
        line,
        value: value.to_string(),
    })
}

/// Parses UCR text. Line numbers in errors are 1-based; series ids are 0-based.
pub fn parse_ucr(text: &str) -> Result<Vec<LabeledSeries>> {
    let mut out: Vec<LabeledSeries> = Vec::new();
    let mut sep = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let sep = *sep.get_or_insert_with(|| Separator::detect(line));
        let mut tokens = sep.split(line.trim()).filter(|t| !t.is_empty());
        let label_tok = tokens.next().ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "missing label".into(),
        })?;
        let label = parse_label(label_tok, lineno + 1)?;
        let values = tokens
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("non-numeric value `{t}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = out.first() {
            if first.len() != values.len() {
                return Err(Error::Shape(format!(
                    "line {} has {} values, expected {}",
                    lineno + 1,
                    values.len(),
                    first.len()
                )));
            }
        }
        let series = LabeledSeries::new(lineno, label, values).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        out.push(series);
    }
    Ok(out)
}

pub fn load_ucr(path: impl AsRef<Path>) -> Result<Vec<LabeledSeries>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ucr(&text)
}

/// Concatenates sample lists (e.g. a TRAIN/TEST file pair), renumbering ids to
/// positions in the merged list. All series must share one length.
pub fn concat(parts: Vec<Vec<LabeledSeries>>) -> Result<Vec<LabeledSeries>> {
    let mut merged: Vec<LabeledSeries> = parts.into_iter().flatten().collect();
    if let Some(first) = merged.first() {
        let len = first.len();
        if let Some(bad) = merged.iter().find(|s| s.len() != len) {
            return Err(Error::Shape(format!(
                "series lengths differ across files ({} vs {len})",
                bad.len()
            )));
        }
    }
    for (i, s) in merged.iter_mut().enumerate() {
        s.id = i;
    }
    Ok(merged)
}

/// Loads and merges several UCR files.
pub fn load_merged<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<LabeledSeries>> {
    let parts = paths.iter().map(load_ucr).collect::<Result<Vec<_>>>()?;
    concat(parts)
}

pub fn label_counts(samples: &[LabeledSeries]) -> (usize, usize) {
    let normal = samples.iter().filter(|s| s.label == Label::Normal).count();
    (normal, samples.len() - normal)
}

pub fn enumerate_pairs(samples: &[LabeledSeries], source: impl Into<String>) -> Result<PairSet> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples to form pairs, got {}",
            samples.len()
        )));
    }
    let n = samples.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            pairs.push(SamplePair {
                index_a: a,
                index_b: b,
                class: PairClass::of(samples[a].label, samples[b].label),
            });
        }
    }
    Ok(PairSet {
        pairs,
        source: source.into(),
    })
}
