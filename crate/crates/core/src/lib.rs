//! First-week dropout prediction for MOOC step-activity logs.
//!
//! The crate is organised as a pipeline:
//!
//! - [`cohort`]: activity-log ingestion, run merging, completion labelling and
//!   week-1 feature matrices (aggregate or per-step).
//! - [`trees`]: CART decision trees (Gini classification, squared-error and
//!   second-order regression) with impurity-decrease importance.
//! - [`ensembles`]: random forest, gradient boosting (binomial deviance),
//!   SAMME AdaBoost and regularised second-order boosting.
//! - [`eval`]: oversampling, stratified splits, k-fold cross-validation,
//!   repeated hold-out and per-class reporting.
//! - [`stats`]: Shapiro-Wilk, Wilcoxon rank-sum and completer/non-completer
//!   median ratios.
//! - [`synth`]: deterministic synthetic cohorts with planted class contrasts.
//!
//! All randomness is driven by explicit `u64` seeds; nothing reads the clock
//! or OS entropy.

pub mod cohort;
pub mod ensembles;
pub mod error;
pub mod eval;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod trees;

pub use error::{Error, Result};
