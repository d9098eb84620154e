//! Battery state-of-health and remaining-useful-life estimation from a single
//! diagnostic charge cycle.
//!
//! The pipeline runs from raw CC-charge traces to incremental-capacity (IC)
//! features ([`ica`]), through exact Gaussian-process regression ([`gp`]) and
//! a per-cell GP mixture ([`ensemble`]), to a cross-cell benchmark
//! ([`eval`]) and a sparse-measurement monitoring simulation
//! ([`monitoring`]).

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod gp;
pub mod ica;
pub mod monitoring;
pub mod report;
pub mod selftest;
pub mod synth;

pub use error::{Error, Result};
