//! Neural arithmetic logic modules (NALMs) and the single-module benchmark
//! around them.
//!
//! The crate bundles:
//!
//! - a small define-by-run reverse-mode autodiff engine ([`autodiff`]),
//! - all module forward definitions with their regularizers, schedules and
//!   initialization schemes ([`layers`]),
//! - synthetic task data ([`data`]) and the epsilon-perfect success
//!   thresholds ([`oracle`]),
//! - a training loop producing per-run records ([`train`]),
//! - aggregation into success-rate / convergence / sparsity summaries with
//!   95% confidence intervals ([`metrics`]),
//! - CSV / JSON / SVG rendering of the aggregated results ([`report`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod train;

pub use error::{NalmError, Result};
pub use matrix::Matrix;
