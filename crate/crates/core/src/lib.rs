//! Equity return-state classification toolkit.
//!
//! Reframes monthly equity-premium prediction as a 10-class problem:
//! each stock-month is labeled by the decile of its return within its
//! calendar month's cross-section (state 1 = worst, 10 = best). The
//! library trains probabilistic classifiers over such panels, tests
//! their accuracy against no-information and martingale baselines,
//! estimates state-transition structure, and converts predictions into
//! long/short portfolios with full economic evaluation.

pub mod analysis;
pub mod benchmarks;
pub mod error;
pub mod learners;
pub mod panel;
pub mod portfolio;
pub mod transition;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// Number of return states: monthly cross-sectional return deciles.
pub const N_STATES: usize = 10;
