//! Exploratory projection pursuit for multivariate numeric data.
//!
//! The crate searches for many locally optimal one-dimensional projections of
//! a numeric table by maximizing (or minimizing) a non-gaussianity index with
//! bio-inspired optimizers, then summarizes the found directions: ordering and
//! diagnostic reports, aggregation of directions into a low-rank projector,
//! and flagging of observations that are extreme along any direction.
//!
//! Typical flow:
//!
//! 1. [`data::DataMatrix`] holds the table; [`preprocess`] standardizes or
//!    whitens it and keeps the transform.
//! 2. [`optimize::run_many`] restarts an optimizer `n_simu` times on a chosen
//!    [`indices::IndexKind`] and returns an [`results::EppRun`] with the
//!    directions sorted best-first.
//! 3. [`results`] extracts scores, predictions, coefficients and report
//!    tables; [`aggregate`] combines directions into a rank-k projector;
//!    [`outliers`] flags extreme observations.
//! 4. [`simbench`] contains the Gaussian-mixture benchmark harness (k-means,
//!    adjusted Rand index, PCA baselines).

pub mod aggregate;
pub mod data;
mod error;
pub mod indices;
mod linalg;
pub mod optimize;
pub mod outliers;
pub mod preprocess;
pub mod results;
pub mod simbench;
mod stats;

pub use error::{EppError, Result};
