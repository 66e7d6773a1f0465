//! Side-channel label inference against DTW-based ECG classification.
//!
//! The crate models the full attack chain: a victim DTW classifier whose
//! per-cell warping decisions leak through the instruction cache, observer
//! models for what a Flush+Reload attacker recovers, split-count features, and
//! from-scratch random forest / k-NN attackers that predict whether the two
//! inputs of a DTW run were normal, abnormal, or mixed. An oblivious DTW
//! variant serves as the countermeasure.

pub mod channel;
pub mod dataset;
pub mod dtw;
pub mod error;
pub mod features;
pub mod harness;
pub mod learn;

pub use error::{Error, Result};
