//! Shared fixtures for integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Location of the real ECG200 files: `$ECG200_DIR`, else `data/ECG200` under
/// the crate or the workspace root. Returns `(train, test)` when both exist.
pub fn ecg200() -> Option<(PathBuf, PathBuf)> {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut dirs: Vec<PathBuf> = Vec::new();
    if let Ok(d) = std::env::var("ECG200_DIR") {
        dirs.push(d.into());
    }
    dirs.push(manifest.join("data/ECG200"));
    dirs.push(manifest.join("../../data/ECG200"));
    for d in dirs {
        for ext in ["tsv", "txt", "csv"] {
            let train = d.join(format!("ECG200_TRAIN.{ext}"));
            let test = d.join(format!("ECG200_TEST.{ext}"));
            if train.is_file() && test.is_file() {
                return Some((train, test));
            }
        }
    }
    None
}

fn bump(t: f64, center: f64, width: f64, height: f64) -> f64 {
    height * (-((t - center) / width).powi(2) / 2.0).exp()
}

/// One synthetic heartbeat of `len` samples, z-normalized. Abnormal beats get a
/// wider, lower QRS complex and an inverted T wave. Each beat is jittered in
/// timing and amplitude. This is a stand-in for tests, not a model of ECG200.
pub fn heartbeat(len: usize, abnormal: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let shift = rng.gen_range(-0.04..0.04);
    let amp = rng.gen_range(0.8..1.2);
    let (qrs_w, qrs_h, t_h) = if abnormal { (0.05, 2.0, -0.6) } else { (0.025, 3.0, 0.8) };
    let mut v: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / len as f64;
            bump(t, 0.2 + shift, 0.03, 0.4)
                + amp * bump(t, 0.4 + shift, qrs_w, qrs_h)
                - bump(t, 0.45 + shift, 0.02, 0.8)
                + bump(t, 0.7 + shift, 0.06, t_h)
                + 0.05 * (2.0 * PI * 3.0 * t).sin()
                + rng.gen_range(-0.15..0.15)
        })
        .collect();
    let mean = v.iter().sum::<f64>() / len as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    for x in &mut v {
        *x = (*x - mean) / sd;
    }
    v
}

/// UCR tab-separated text for `normal` then `abnormal` synthetic beats, interleaved by seed.
pub fn cohort_tsv(normal: usize, abnormal: usize, len: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = std::iter::repeat_n(false, normal)
        .chain(std::iter::repeat_n(true, abnormal))
        .collect();
    labels.shuffle(&mut rng);
    let mut out = String::new();
    for abnormal in labels {
        out.push_str(if abnormal { "-1" } else { "1" });
        for x in heartbeat(len, abnormal, &mut rng) {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    out
}

/// Writes a synthetic train/test pair of UCR files into `dir`.
pub fn write_cohort(dir: &Path, train: (usize, usize), test: (usize, usize), len: usize, seed: u64) -> (PathBuf, PathBuf) {
    let a = dir.join("SYN_TRAIN.tsv");
    let b = dir.join("SYN_TEST.tsv");
    std::fs::write(&a, cohort_tsv(train.0, train.1, len, seed)).unwrap();
    std::fs::write(&b, cohort_tsv(test.0, test.1, len, seed ^ 0x9e37_79b9)).unwrap();
    (a, b)
}
