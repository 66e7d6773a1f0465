use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dtw_leak::channel::{observe, ObserverConfig, ObserverKind, OBSERVED_CSV_HEADER};
use dtw_leak::dataset::{label_counts, PairClass};
use dtw_leak::dtw::Direction;
use dtw_leak::harness::{
    evaluate_defense, inference_demo, ingest, reproduce_split_table, run_pipeline, trace_pairs, write_traces,
    ExperimentConfig, View, TABLE_SPLITS,
};
use dtw_leak::learn::{ClassifierConfig, ForestConfig, SplitSpec};
use dtw_leak::{Error, Result};

/// Side-channel label inference against DTW-based ECG classification.
#[derive(Parser)]
#[command(name = "dtw-leak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the datasets and print sample and pair counts.
    Ingest(Opts),
    /// Run traced DTW on every pair and write traces and observations.
    Trace(Opts),
    /// Full pipeline: traces, observations, features, training, evaluation.
    Attack(Opts),
    /// Accuracy grid over 100/10/1 splits and the four warping views.
    Table {
        #[command(flatten)]
        opts: Opts,
        /// Seeds to average over, starting at --seed.
        #[arg(long, default_value_t = 3)]
        repeats: u64,
    },
    /// Attacker accuracy against the standard and the oblivious victim.
    Defend(Opts),
    /// Infer the label of one pair member from the other and the predicted pair class.
    Infer(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    I,
    J,
    Diag,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Oracle,
    Single,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Rf,
    Knn,
}

#[derive(Args)]
struct Opts {
    /// UCR training file.
    #[arg(long)]
    train: PathBuf,
    /// UCR test file, merged after the training file.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long, value_enum, default_value = "diag")]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value = "noisy")]
    channel: ChannelArg,
    #[arg(long, default_value_t = 0.05)]
    miss_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    spurious_rate: f64,
    #[arg(long, default_value_t = 98)]
    probe_period: usize,
    #[arg(long, value_enum, default_value = "rf")]
    classifier: ClassifierArg,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    /// Cross-validation folds on the training part; 0 disables.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig> {
        let view = match self.direction {
            DirectionArg::I => View::Direction(Direction::AdvanceI),
            DirectionArg::J => View::Direction(Direction::AdvanceJ),
            DirectionArg::Diag => View::Direction(Direction::Diagonal),
            DirectionArg::All => View::FullPath,
        };
        let kind = match self.channel {
            ChannelArg::Oracle => ObserverKind::Oracle,
            ChannelArg::Single => ObserverKind::Single,
            ChannelArg::Noisy => ObserverKind::Noisy,
        };
        let classifier = match self.classifier {
            ClassifierArg::Rf => ClassifierConfig::RandomForest(ForestConfig {
                num_trees: self.trees,
                ..ForestConfig::default()
            }),
            ClassifierArg::Knn => ClassifierConfig::Knn { k: self.k },
        };
        let cfg = ExperimentConfig {
            datasets: std::iter::once(self.train.clone()).chain(self.test.clone()).collect(),
            observer: ObserverConfig {
                kind,
                probe_period: self.probe_period,
                miss_rate: self.miss_rate,
                spurious_rate: self.spurious_rate,
                ..ObserverConfig::default()
            },
            num_splits: self.splits,
            view,
            classifier,
            split: SplitSpec {
                train_fraction: self.train_frac,
                ..SplitSpec::default()
            },
            folds: self.folds,
            seed: self.seed,
            out: self.out.clone(),
        };
        cfg.normalized()
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(opts) => {
            let (samples, pairs) = ingest(&opts.config()?)?;
            let (normal, abnormal) = label_counts(&samples);
            let counts = pairs.class_counts();
            println!("samples   {:>8}  (normal {normal}, abnormal {abnormal})", samples.len());
            println!("length    {:>8}", samples[0].len());
            println!("pairs     {:>8}", pairs.len());
            for class in PairClass::ALL {
                println!("  {:<8}{:>8}", class.name(), counts[class.index()]);
            }
        }
        Command::Trace(opts) => {
            let cfg = opts.config()?;
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| Error::Config("trace needs --out".into()))?;
            let (samples, pairs) = ingest(&cfg)?;
            let traces = trace_pairs(&samples, &pairs)?;
            let dir = out.join("traces").join(cfg.run_id()?);
            fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            write_traces(&pairs, &traces, &dir.join("traces.csv"))?;
            let mut observed = String::from(OBSERVED_CSV_HEADER);
            observed.push('\n');
            for (id, t) in traces.iter().enumerate() {
                observed.push_str(&observe(t, id, &cfg.observer)?.to_csv_record());
                observed.push('\n');
            }
            let path = dir.join("observed.csv");
            fs::write(&path, observed).map_err(|e| io_error(&path, e))?;
            println!("{} traces written to {}", traces.len(), dir.display());
        }
        Command::Attack(opts) => {
            let run = run_pipeline(&opts.config()?)?;
            print!("{}", run.summary());
            for a in &run.artifacts {
                println!("wrote {}", a.display());
            }
        }
        Command::Table { opts, repeats } => {
            if repeats == 0 {
                return Err(Error::Config("repeats must be at least 1".into()));
            }
            let cfg = opts.config()?;
            let seeds: Vec<u64> = (0..repeats).map(|r| cfg.seed.wrapping_add(r)).collect();
            let table = reproduce_split_table(&cfg, &TABLE_SPLITS, &seeds)?;
            print!("{}", table.summary());
        }
        Command::Defend(opts) => {
            print!("{}", evaluate_defense(&opts.config()?)?.summary());
        }
        Command::Infer(opts) => {
            let cfg = opts.config()?;
            let (samples, pairs) = ingest(&cfg)?;
            let run = run_pipeline(&cfg)?;
            let demo = inference_demo(&run, &samples, &pairs)?;
            println!("held-out pairs         {:>8}", demo.pairs);
            println!("pair-class accuracy    {:>7.1}%", demo.pair_accuracy * 100.0);
            println!("inferred-label accuracy{:>7.1}%", demo.label_accuracy * 100.0);
            println!("inconsistent verdicts  {:>8}", demo.inconsistent);
        }
    }
    Ok(())
}

fn io_error(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !msg.ends_with(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
