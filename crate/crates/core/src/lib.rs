//! Hierarchical specimen triage for dermatopathology: quality-controlled tile
//! bags, attention-based multiple-instance classifiers arranged as a
//! three-model hierarchy, Monte Carlo dropout confidence thresholds, and the
//! evaluation and worklist-simulation tooling around them.

pub mod calibration;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod mil;
pub mod persist;
pub mod nn;
pub mod qc;
pub mod rng;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
