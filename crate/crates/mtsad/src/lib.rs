//! Anomaly detection for correlated multivariate time series.
//!
//! The pipeline turns a raw multivariate series into a sequence of
//! multi-channel correlation matrices, trains an adversarial
//! encoder-decoder-encoder reconstruction model over them, and scores each
//! test step by how badly the model reconstructs it. Scores are thresholded
//! into anomaly flags, flagged spans are attributed to the series that drive
//! them, and detections are summarised with point metrics and a
//! window-aware benchmark score.
//!
//! The crate is organised along the pipeline:
//!
//! - [`series`]: the multivariate time-series container, labels, holiday
//!   calendars, CSV ingestion, and train/test splitting.
//! - [`synth`]: seasonal synthetic data generation and anomaly injection.
//! - [`correlation`]: correlation-matrix tensors and model-sample assembly
//!   (history stacking, smoothed seasonal stacking, holiday bits).
//! - [`nn`]: the adversarial reconstruction model, its training loop, and
//!   a small reverse-mode autodiff engine it is built on.
//! - [`scoring`]: residual-based anomaly scores and threshold fitting.
//! - [`rootcause`]: per-series attribution of flagged events.
//! - [`evaluation`]: point-level metrics and the window-aware benchmark
//!   score.
//!
//! A narrative guide with runnable examples lives in `book/`; its code
//! blocks are compiled as doc-tests via the [`guide`] module.

pub mod correlation;
mod error;
pub mod evaluation;
pub mod guide;
pub mod nn;
pub mod rootcause;
pub mod scoring;
pub mod series;
pub mod synth;

pub use error::{Error, Result};
