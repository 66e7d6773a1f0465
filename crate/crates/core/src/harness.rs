//! Experiment orchestration: ingest, pair enumeration, traced DTW, observation,
//! features, training and evaluation, plus the split table, the defense
//! comparison and the known-reference label inference.
//!
//! The attacker only ever sees observed traces; sample values stay on the
//! victim side of [`trace_pairs`].

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{observe, observe_decision_free, ObserverConfig, ObserverKind};
use crate::dataset::{enumerate_pairs, load_merged, Label, LabeledSeries, PairClass, PairSet, SamplePair};
use crate::dtw::{dtw_oblivious, dtw_traced, DecisionTrace, Direction};
use crate::error::{Error, Result, StageExt};
use crate::features::{coarsen, direction_block, export_features, extract, features_csv, FeatureVector, Scheme};
use crate::learn::{
    cross_validate, evaluate, predict_all, split_dataset, AttackReport, ClassifierConfig, CvResult,
    ForestConfig, Model, SplitSpec,
};

/// Which part of the observation the attacker trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Counts of one warping direction per segment.
    Direction(Direction),
    /// Counts of all three directions per segment (oracle channel only).
    FullPath,
}

impl View {
    pub const TABLE_COLUMNS: [View; 4] = [
        View::Direction(Direction::AdvanceI),
        View::Direction(Direction::AdvanceJ),
        View::Direction(Direction::Diagonal),
        View::FullPath,
    ];

    pub fn label(self) -> String {
        match self {
            View::Direction(d) => d.to_string(),
            View::FullPath => "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// UCR files, merged in order into one sample pool.
    pub datasets: Vec<PathBuf>,
    pub observer: ObserverConfig,
    pub num_splits: usize,
    pub view: View,
    pub classifier: ClassifierConfig,
    pub split: SplitSpec,
    /// Cross-validation folds on the training part; 0 disables.
    pub folds: usize,
    /// Master seed, copied into every stochastic stage.
    pub seed: u64,
    /// Artifact root; `None` keeps everything in memory.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            observer: ObserverConfig::default(),
            num_splits: 100,
            view: View::Direction(Direction::Diagonal),
            classifier: ClassifierConfig::RandomForest(ForestConfig::default()),
            split: SplitSpec::default(),
            folds: 10,
            seed: 42,
            out: None,
        }
    }
}

impl ExperimentConfig {
    /// Copies the master seed and view into the nested configs and validates them.
    pub fn normalized(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        cfg.observer.seed = cfg.seed;
        cfg.split.seed = cfg.seed;
        if let ClassifierConfig::RandomForest(f) = &mut cfg.classifier {
            f.seed = cfg.seed;
        }
        match (cfg.observer.kind, cfg.view) {
            (ObserverKind::Oracle, _) => {}
            (_, View::Direction(d)) => cfg.observer.monitored = d,
            (kind, View::FullPath) => {
                return Err(Error::Config(format!(
                    "the full warping path is only visible to the oracle channel, not `{kind}`"
                )))
            }
        }
        cfg.observer.validate()?;
        if cfg.num_splits == 0 {
            return Err(Error::Config("num_splits must be at least 1".into()));
        }
        if cfg.folds == 1 {
            return Err(Error::Config("folds must be 0 (off) or at least 2".into()));
        }
        match cfg.classifier {
            ClassifierConfig::RandomForest(f) if f.num_trees == 0 => {
                return Err(Error::Config("num_trees must be at least 1".into()))
            }
            ClassifierConfig::Knn { k: 0 } => return Err(Error::Config("k must be at least 1".into())),
            _ => {}
        }
        Ok(cfg)
    }

    /// Hex digest of the normalized configuration (output directory excluded).
    pub fn run_id(&self) -> Result<String> {
        let json = serde_json::to_string(&self.normalized()?).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

/// Loads and merges the configured datasets and enumerates all unordered pairs.
pub fn ingest(cfg: &ExperimentConfig) -> Result<(Vec<LabeledSeries>, PairSet)> {
    if cfg.datasets.is_empty() {
        return Err(Error::Config("no dataset files given".into()));
    }
    let samples = load_merged(&cfg.datasets).stage("ingest")?;
    let source = cfg
        .datasets
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("+");
    let pairs = enumerate_pairs(&samples, source).stage("pairs")?;
    Ok((samples, pairs))
}

/// Runs traced DTW on every pair, in parallel, returning traces in pair order.
pub fn trace_pairs(samples: &[LabeledSeries], pairs: &PairSet) -> Result<Vec<DecisionTrace>> {
    pairs
        .pairs
        .par_iter()
        .map(|p| trace_pair(samples, p))
        .collect()
}

fn trace_pair(samples: &[LabeledSeries], p: &SamplePair) -> Result<DecisionTrace> {
    let mut trace = dtw_traced(&samples[p.index_a].values, &samples[p.index_b].values)?.trace;
    trace.pair_class = Some(p.class);
    Ok(trace)
}

/// Observation and feature extraction for one trace under `cfg`.
pub fn featurize(trace: &DecisionTrace, pair_id: usize, cfg: &ExperimentConfig) -> Result<FeatureVector> {
    let obs = observe(trace, pair_id, &cfg.observer)?;
    project(extract(&obs, cfg.num_splits)?, cfg.view)
}

fn project(fv: FeatureVector, view: View) -> Result<FeatureVector> {
    match (fv.scheme, view) {
        (Scheme::FullPathCounts, View::Direction(d)) => direction_block(&fv, d),
        _ => Ok(fv),
    }
}

pub const TRACE_CSV_HEADER: &str = "pair_id,index_a,index_b,pair_class,trace";

pub fn write_traces(pairs: &PairSet, traces: &[DecisionTrace], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for (id, (p, t)) in pairs.pairs.iter().zip(traces).enumerate() {
            writeln!(
                w,
                "{id},{},{},{},{}",
                p.index_a,
                p.index_b,
                p.class.name(),
                t.to_trace_string()
            )?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV written by [`write_traces`]; the grid shape is not stored
/// in the file and must be supplied.
pub fn read_traces(path: &Path, n: usize, m: usize) -> Result<Vec<(SamplePair, DecisionTrace)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != TRACE_CSV_HEADER {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected header `{TRACE_CSV_HEADER}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Shape(format!("line {lineno}: expected 5 fields, got {}", fields.len())));
        }
        let num = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad index `{s}`"),
            })
        };
        let pair_id = num(fields[0])?;
        if pair_id != out.len() {
            return Err(Error::Consistency(format!(
                "line {lineno}: pair id {pair_id} out of sequence"
            )));
        }
        let class: PairClass = fields[3].parse()?;
        let mut trace = DecisionTrace::from_trace_string(fields[4], n, m)?;
        trace.pair_class = Some(class);
        let pair = SamplePair {
            index_a: num(fields[1])?,
            index_b: num(fields[2])?,
            class,
        };
        out.push((pair, trace));
    }
    Ok(out)
}

/// Everything the training stages produce for one feature set.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub model: Model,
    pub report: AttackReport,
    pub cv: Option<CvResult>,
    pub train_size: usize,
    /// Held-out vectors with their predictions, in pair order.
    pub test: Vec<FeatureVector>,
    pub predictions: Vec<PairClass>,
}

/// Split, optional cross-validation, training and held-out evaluation.
pub fn attack(vectors: &[FeatureVector], cfg: &ExperimentConfig) -> Result<AttackOutcome> {
    let (train, test) = split_dataset(vectors, &cfg.split).stage("split")?;
    let cv = match cfg.folds {
        0 => None,
        folds => Some(cross_validate(&train, folds, &cfg.classifier, cfg.seed).stage("cross-validate")?),
    };
    let model = cfg.classifier.train(&train).stage("train")?;
    let report = evaluate(&model, &test).stage("evaluate")?;
    let predictions = predict_all(&model, &test).stage("evaluate")?;
    Ok(AttackOutcome {
        model,
        report,
        cv,
        train_size: train.len(),
        test,
        predictions,
    })
}

/// Result of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub outcome: AttackOutcome,
    pub pair_counts: [usize; PairClass::COUNT],
    /// Files written, empty when no output directory was set.
    pub artifacts: Vec<PathBuf>,
}

impl PipelineRun {
    /// Report JSON: configuration, run id, sizes, cross-validation and metrics.
    pub fn report_json(&self) -> String {
        report_json(&self.run_id, &self.config, &self.outcome, &self.pair_counts)
    }

    /// Aligned plain-text summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "run {}  channel {}  view {}  splits {}  classifier {}\n",
            self.run_id,
            self.config.observer.kind,
            self.config.view.label(),
            self.config.num_splits,
            self.config.classifier.name()
        );
        let _ = writeln!(
            s,
            "pairs {} (normal {}, abnormal {}, hybrid {})  train {}  test {}",
            self.pair_counts.iter().sum::<usize>(),
            self.pair_counts[0],
            self.pair_counts[1],
            self.pair_counts[2],
            self.outcome.train_size,
            self.outcome.test.len()
        );
        if let Some(cv) = &self.outcome.cv {
            let _ = writeln!(s, "{}-fold cv success {:.1}%", cv.per_fold.len(), cv.mean * 100.0);
        }
        s.push_str(&self.outcome.report.summary_table());
        s
    }
}

fn report_json(
    run_id: &str,
    cfg: &ExperimentConfig,
    outcome: &AttackOutcome,
    pair_counts: &[usize; PairClass::COUNT],
) -> String {
    let value = serde_json::json!({
        "run_id": run_id,
        "config": cfg,
        "pairs": {
            "normal": pair_counts[0],
            "abnormal": pair_counts[1],
            "hybrid": pair_counts[2],
        },
        "train_size": outcome.train_size,
        "test_size": outcome.test.len(),
        "cross_validation": outcome.cv,
        "report": outcome.report.to_json_value(),
    });
    serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
}

/// Tracks files written by one run so a failure can remove them.
struct Artifacts {
    root: Option<PathBuf>,
    run_id: String,
    dirs: Vec<PathBuf>,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(root: Option<PathBuf>, run_id: &str) -> Self {
        Artifacts {
            root,
            run_id: run_id.to_string(),
            dirs: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Path for `kind/<run-id>/name`, creating the directory; `None` without a root.
    fn path(&mut self, kind: &str, name: &str) -> Result<Option<PathBuf>> {
        let Some(root) = &self.root else { return Ok(None) };
        let dir = root.join(kind).join(&self.run_id);
        if !dir.exists() {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            self.dirs.push(dir.clone());
        }
        let file = dir.join(name);
        self.files.push(file.clone());
        Ok(Some(file))
    }

    fn discard(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in &self.dirs {
            let _ = fs::remove_dir(d);
        }
    }
}

/// The full attack pipeline. With an output directory set, writes
/// `traces/<run-id>/traces.csv`, `features/<run-id>/features.csv`,
/// `models/<run-id>/model.json` and `reports/<run-id>/report.json`;
/// on failure every file written by this run is removed.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    let cfg = cfg.normalized()?;
    let run_id = cfg.run_id()?;
    let mut artifacts = Artifacts::new(cfg.out.clone(), &run_id);
    let result = pipeline_stages(&cfg, &run_id, &mut artifacts);
    if result.is_err() {
        artifacts.discard();
    }
    result
}

fn pipeline_stages(cfg: &ExperimentConfig, run_id: &str, artifacts: &mut Artifacts) -> Result<PipelineRun> {
    let (samples, pairs) = ingest(cfg)?;
    let vectors = if let Some(path) = artifacts.path("traces", "traces.csv")? {
        let traces = trace_pairs(&samples, &pairs).stage("trace")?;
        write_traces(&pairs, &traces, &path).stage("write traces")?;
        traces
            .par_iter()
            .enumerate()
            .map(|(id, t)| featurize(t, id, cfg))
            .collect::<Result<Vec<_>>>()
            .stage("features")?
    } else {
        pairs
            .pairs
            .par_iter()
            .enumerate()
            .map(|(id, p)| featurize(&trace_pair(&samples, p)?, id, cfg))
            .collect::<Result<Vec<_>>>()
            .stage("trace and features")?
    };
    if let Some(path) = artifacts.path("features", "features.csv")? {
        export_features(&vectors, &path).stage("write features")?;
    }
    finish(cfg, run_id, &vectors, pairs.class_counts(), artifacts)
}

fn finish(
    cfg: &ExperimentConfig,
    run_id: &str,
    vectors: &[FeatureVector],
    pair_counts: [usize; PairClass::COUNT],
    artifacts: &mut Artifacts,
) -> Result<PipelineRun> {
    let outcome = attack(vectors, cfg)?;
    let run = PipelineRun {
        run_id: run_id.to_string(),
        config: cfg.clone(),
        outcome,
        pair_counts,
        artifacts: Vec::new(),
    };
    if let Some(path) = artifacts.path("models", "model.json")? {
        run.outcome.model.save(&path).stage("write model")?;
    }
    if let Some(path) = artifacts.path("reports", "report.json")? {
        fs::write(&path, run.report_json()).map_err(|e| Error::io(&path, e)).stage("write report")?;
    }
    Ok(PipelineRun {
        artifacts: artifacts.files.clone(),
        ..run
    })
}

/// Re-runs the attacker stages from a persisted trace CSV. Feature vectors
/// and the report match the run that wrote the file.
pub fn run_from_traces(cfg: &ExperimentConfig, traces_csv: &Path, n: usize, m: usize) -> Result<PipelineRun> {
    let cfg = cfg.normalized()?;
    let run_id = cfg.run_id()?;
    let records = read_traces(traces_csv, n, m).stage("read traces")?;
    let mut pair_counts = [0; PairClass::COUNT];
    for (p, _) in &records {
        pair_counts[p.class.index()] += 1;
    }
    let vectors = records
        .par_iter()
        .enumerate()
        .map(|(id, (_, t))| featurize(t, id, &cfg))
        .collect::<Result<Vec<_>>>()
        .stage("features")?;
    let mut artifacts = Artifacts::new(None, &run_id);
    finish(&cfg, &run_id, &vectors, pair_counts, &mut artifacts)
}

/// Feature CSV for the configured channel, as the pipeline would write it.
pub fn feature_csv_from_traces(cfg: &ExperimentConfig, traces: &[DecisionTrace]) -> Result<String> {
    let cfg = cfg.normalized()?;
    let vectors = traces
        .par_iter()
        .enumerate()
        .map(|(id, t)| featurize(t, id, &cfg))
        .collect::<Result<Vec<_>>>()?;
    features_csv(&vectors)
}

pub const TABLE_SPLITS: [usize; 3] = [100, 10, 1];

/// Accuracy grid over split counts (rows) and views (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub splits: Vec<usize>,
    pub views: Vec<View>,
    pub seeds: Vec<u64>,
    /// `accuracy[row][col]`, mean over seeds, as a fraction.
    pub accuracy: Vec<Vec<f64>>,
    /// `per_seed[row][col][seed]`.
    pub per_seed: Vec<Vec<Vec<f64>>>,
}

impl SplitTable {
    pub fn cell(&self, splits: usize, view: View) -> Option<f64> {
        let r = self.splits.iter().position(|&s| s == splits)?;
        let c = self.views.iter().position(|&v| v == view)?;
        Some(self.accuracy[r][c])
    }

    /// Grid CSV: one row per split count, one percentage column per view.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("num_splits");
        for v in &self.views {
            out.push(',');
            out.push_str(&v.label());
        }
        out.push('\n');
        for (r, s) in self.splits.iter().enumerate() {
            let _ = write!(out, "{s}");
            for acc in &self.accuracy[r] {
                let _ = write!(out, ",{:.2}", acc * 100.0);
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{:<12}", "splits");
        for v in &self.views {
            out.push_str(&format!("{:>10}", v.label()));
        }
        out.push('\n');
        for (r, s) in self.splits.iter().enumerate() {
            out.push_str(&format!("{s:<12}"));
            for acc in &self.accuracy[r] {
                out.push_str(&format!("{:>10.1}", acc * 100.0));
            }
            out.push('\n');
        }
        out
    }
}

/// Oracle-derived accuracy grid for split counts × views, averaged over `seeds`.
///
/// DTW runs once per pair; every cell reuses those traces. The observer,
/// view and split count of `base` are ignored. Writes `table.csv` under
/// `reports/<run-id>/` when an output directory is set.
pub fn reproduce_split_table(base: &ExperimentConfig, splits: &[usize], seeds: &[u64]) -> Result<SplitTable> {
    if splits.is_empty() || seeds.is_empty() {
        return Err(Error::Config("split table needs at least one split count and one seed".into()));
    }
    let mut base = base.clone();
    base.observer = ObserverConfig::oracle();
    base.view = View::FullPath;
    let (samples, pairs) = ingest(&base)?;
    let oracle = ObserverConfig::oracle();
    let finest = *splits.iter().max().expect("non-empty");
    let per_pair: Vec<Vec<FeatureVector>> = pairs
        .pairs
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let obs = observe(&trace_pair(&samples, p)?, id, &oracle)?;
            let fine = extract(&obs, finest)?;
            // Coarse rows aggregate the finest row so segment boundaries align.
            splits
                .iter()
                .map(|&k| if finest.is_multiple_of(k) { coarsen(&fine, k) } else { extract(&obs, k) })
                .collect()
        })
        .collect::<Result<_>>()
        .stage("trace and features")?;

    let views = View::TABLE_COLUMNS.to_vec();
    let mut per_seed = vec![vec![Vec::with_capacity(seeds.len()); views.len()]; splits.len()];
    for (r, &k) in splits.iter().enumerate() {
        for (c, &view) in views.iter().enumerate() {
            let vectors = per_pair
                .iter()
                .map(|fs| project(fs[r].clone(), view))
                .collect::<Result<Vec<_>>>()?;
            for &seed in seeds {
                let cfg = ExperimentConfig {
                    num_splits: k,
                    view,
                    seed,
                    ..base.clone()
                }
                .normalized()?;
                per_seed[r][c].push(attack(&vectors, &cfg)?.report.overall_success);
            }
        }
    }
    let accuracy = per_seed
        .iter()
        .map(|row| row.iter().map(|cell| cell.iter().sum::<f64>() / cell.len() as f64).collect())
        .collect();
    let table = SplitTable {
        splits: splits.to_vec(),
        views,
        seeds: seeds.to_vec(),
        accuracy,
        per_seed,
    };
    if let Some(root) = &base.out {
        let dir = root.join("reports").join(format!("table-{}", base.run_id()?));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("table.csv");
        fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}

pub const DEFENSE_RATIONALE: &str = "The oblivious victim executes the same selection code on every cell, so the \
observer sees the same event stream for every pair of a given shape. That stream is modeled directly as a \
constant observation instead of simulating per-cell memory touches; the feature extractor cannot tell the two apart.";

/// Paired attacker results against the standard and the oblivious victim.
#[derive(Debug, Clone)]
pub struct DefenseReport {
    pub standard: AttackReport,
    pub oblivious: AttackReport,
    /// Largest pair-class share over all pairs.
    pub majority_baseline: f64,
    /// Pairs on which both victims returned bit-identical distances.
    pub distances_checked: usize,
}

impl DefenseReport {
    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "standard": self.standard.to_json_value(),
            "oblivious": self.oblivious.to_json_value(),
            "majority_baseline": self.majority_baseline,
            "distances_checked": self.distances_checked,
            "distances_equal": true,
            "rationale": DEFENSE_RATIONALE,
        });
        serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
    }

    pub fn summary(&self) -> String {
        format!(
            "standard victim\n{}oblivious victim\n{}majority baseline {:.1}%; distances equal on {} pairs\n",
            self.standard.summary_table(),
            self.oblivious.summary_table(),
            self.majority_baseline * 100.0,
            self.distances_checked
        )
    }
}

/// Trains and evaluates the attacker against both victims on the same pairs and
/// split. Fails with an invariant error if the two DTW variants ever disagree.
pub fn evaluate_defense(cfg: &ExperimentConfig) -> Result<DefenseReport> {
    let cfg = cfg.normalized()?;
    let (samples, pairs) = ingest(&cfg)?;
    let arms: Vec<(FeatureVector, FeatureVector)> = pairs
        .pairs
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let (a, b) = (&samples[p.index_a].values, &samples[p.index_b].values);
            let traced = dtw_traced(a, b)?;
            let oblivious = dtw_oblivious(a, b)?;
            if traced.distance.to_bits() != oblivious.to_bits() {
                return Err(Error::Invariant(format!(
                    "pair {id}: oblivious distance {oblivious} differs from traced {}",
                    traced.distance
                )));
            }
            let mut trace = traced.trace;
            trace.pair_class = Some(p.class);
            let standard = featurize(&trace, id, &cfg)?;
            let blind = observe_decision_free(a.len(), b.len(), id, Some(p.class), &cfg.observer)?;
            let blind = project(extract(&blind, cfg.num_splits)?, cfg.view)?;
            Ok((standard, blind))
        })
        .collect::<Result<_>>()
        .stage("trace and features")?;
    let (standard, blind): (Vec<_>, Vec<_>) = arms.into_iter().unzip();
    let counts = pairs.class_counts();
    let majority_baseline = *counts.iter().max().expect("three classes") as f64 / pairs.len() as f64;
    let report = DefenseReport {
        standard: attack(&standard, &cfg)?.report,
        oblivious: attack(&blind, &cfg)?.report,
        majority_baseline,
        distances_checked: pairs.len(),
    };
    if let Some(root) = &cfg.out {
        let dir = root.join("reports").join(format!("defense-{}", cfg.run_id()?));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("defense.json");
        fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceVerdict {
    Normal,
    Abnormal,
    /// The predicted pair class cannot contain the known sample.
    Inconsistent,
}

/// Label of the unknown input given the predicted pair class and the label of
/// the input the attacker supplied.
pub fn infer_unknown_label(pair_prediction: PairClass, known_label: Label) -> InferenceVerdict {
    match (pair_prediction, known_label) {
        (PairClass::NormalPair, Label::Normal) | (PairClass::HybridPair, Label::Abnormal) => {
            InferenceVerdict::Normal
        }
        (PairClass::AbnormalPair, Label::Abnormal) | (PairClass::HybridPair, Label::Normal) => {
            InferenceVerdict::Abnormal
        }
        (PairClass::AbnormalPair, Label::Normal) | (PairClass::NormalPair, Label::Abnormal) => {
            InferenceVerdict::Inconsistent
        }
    }
}

/// Outcome of inferring the second sample's label over a held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceDemo {
    pub pairs: usize,
    pub pair_accuracy: f64,
    pub label_accuracy: f64,
    pub inconsistent: usize,
}

/// Treats the first sample of every held-out pair as attacker-known and scores
/// the inferred label of the second.
pub fn inference_demo(run: &PipelineRun, samples: &[LabeledSeries], pairs: &PairSet) -> Result<InferenceDemo> {
    let outcome = &run.outcome;
    let (mut correct, mut inconsistent) = (0, 0);
    for (v, &pred) in outcome.test.iter().zip(&outcome.predictions) {
        let pair = pairs.pairs.get(v.pair_id).ok_or_else(|| {
            Error::Consistency(format!("test vector {} has no matching pair", v.pair_id))
        })?;
        let known = samples[pair.index_a].label;
        let truth = samples[pair.index_b].label;
        match infer_unknown_label(pred, known) {
            InferenceVerdict::Inconsistent => inconsistent += 1,
            InferenceVerdict::Normal => correct += usize::from(truth == Label::Normal),
            InferenceVerdict::Abnormal => correct += usize::from(truth == Label::Abnormal),
        }
    }
    let total = outcome.test.len();
    Ok(InferenceDemo {
        pairs: total,
        pair_accuracy: outcome.report.overall_success,
        label_accuracy: correct as f64 / total as f64,
        inconsistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_table() {
        use InferenceVerdict as V;
        use Label::*;
        use PairClass::*;
        let cases = [
            (NormalPair, Normal, V::Normal),
            (HybridPair, Normal, V::Abnormal),
            (AbnormalPair, Abnormal, V::Abnormal),
            (HybridPair, Abnormal, V::Normal),
            (AbnormalPair, Normal, V::Inconsistent),
            (NormalPair, Abnormal, V::Inconsistent),
        ];
        for (pred, known, want) in cases {
            assert_eq!(infer_unknown_label(pred, known), want, "{pred:?} {known:?}");
        }
    }

    #[test]
    fn consistent_verdict_recovers_the_pair() {
        for pred in PairClass::ALL {
            for known in [Label::Normal, Label::Abnormal] {
                let other = match infer_unknown_label(pred, known) {
                    InferenceVerdict::Normal => Label::Normal,
                    InferenceVerdict::Abnormal => Label::Abnormal,
                    InferenceVerdict::Inconsistent => continue,
                };
                assert_eq!(PairClass::of(known, other), pred);
            }
        }
    }

    #[test]
    fn normalization_propagates_seed_and_view() {
        let cfg = ExperimentConfig {
            seed: 7,
            view: View::Direction(Direction::AdvanceJ),
            ..ExperimentConfig::default()
        }
        .normalized()
        .unwrap();
        assert_eq!(cfg.observer.seed, 7);
        assert_eq!(cfg.split.seed, 7);
        assert_eq!(cfg.observer.monitored, Direction::AdvanceJ);
        match cfg.classifier {
            ClassifierConfig::RandomForest(f) => assert_eq!(f.seed, 7),
            _ => unreachable!(),
        }
    }

    #[test]
    fn full_path_needs_oracle() {
        let cfg = ExperimentConfig {
            view: View::FullPath,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.normalized(), Err(Error::Config(_))));
        let ok = ExperimentConfig {
            observer: ObserverConfig::oracle(),
            ..cfg
        };
        assert!(ok.normalized().is_ok());
    }

    #[test]
    fn run_id_ignores_output_dir_and_tracks_seed() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: Some("/tmp/x".into()),
            ..a.clone()
        };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.run_id().unwrap(), b.run_id().unwrap());
        assert_ne!(a.run_id().unwrap(), c.run_id().unwrap());
        assert_eq!(a.run_id().unwrap().len(), 16);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ExperimentConfig { num_splits: 0, ..Default::default() },
            ExperimentConfig { folds: 1, ..Default::default() },
            ExperimentConfig { classifier: ClassifierConfig::Knn { k: 0 }, ..Default::default() },
        ];
        for cfg in bad {
            assert_eq!(cfg.normalized().unwrap_err().exit_code(), 1);
        }
        assert!(matches!(ingest(&ExperimentConfig::default()), Err(Error::Config(_))));
    }
}
