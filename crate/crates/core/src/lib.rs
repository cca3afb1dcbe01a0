//! Sharpness-aware minimization for shifting data distributions.
//!
//! This crate implements the SAM optimizer family (Adam baseline plus eight
//! SAM variants expressed through gradient / perturbation / descent oracles),
//! gradual self-training over sequences of shifting domains, and the
//! diagnostics that make the relevant generalization quantities measurable:
//! sharpness estimates, empirical Wasserstein shifts, weight-shift traces and
//! a bound-term report.
//!
//! Layout:
//! - [`autodiff`]: dense f64 tensors and a define-by-run reverse-mode tape
//! - [`nn`]: MLP classifiers, flat parameter views with role tags, checkpoints
//! - [`opt`]: the optimizer family and its per-step cost ledger
//! - [`domains`]: shifting-domain generators, file ingestion, pseudo-labels
//! - [`metrics`]: sharpness, Wasserstein distance, weight shift, bound terms
//! - [`harness`]: run configs, training/evaluation engine, sweeps, reports

pub mod autodiff;
pub mod error;
pub mod nn;
pub mod opt;
pub mod seeding;

pub use error::{Error, Result};
