//! Lower-tail extreme value modeling for non-stationary received-power traces.
//!
//! The pipeline splits a trace by an externally supplied factor label,
//! declusters dependent extremes, picks a threshold per group with the
//! mean-residual-life and parameter-stability methods, fits a generalized
//! Pareto distribution (GPD) by maximum likelihood and finally chooses
//! between a single stationary tail model and a piecewise (change-point)
//! model with a deviance test.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod changepoint;
pub mod decluster;
pub mod diagnostics;
pub mod error;
pub mod gpd;
pub mod optim;
pub mod pipeline;
pub mod special;
pub mod stationarity;
pub mod synth;
pub mod threshold;
pub mod trace;

pub use error::{Error, Result};
