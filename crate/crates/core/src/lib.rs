//! Streaming domain-shift detection for multi-channel EMG-like signals.
//!
//! The pipeline turns a raw signal into RMS frames, then per-window
//! least-squares slopes, then Mahalanobis scores against a rolling
//! reference, and finally feeds the scores to incremental drift detectors.

pub mod cli;
pub mod detectors;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kpca;
pub mod preprocess;
pub mod stream;

pub use error::{Error, Result};
