//! Post-processing of bounded multi-model ensemble forecasts.
//!
//! Forecasts and observations are Box-Cox transformed, calibrated with a
//! doubly truncated normal Bayesian model averaging (BMA) mixture or a
//! truncated normal EMOS distribution, and verified on the original scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`special`] and [`quadrature`]: normal CDF/quantile and adaptive Simpson.
//! - [`distributions`]: the doubly truncated normal and its mixtures.
//! - [`boxcox`]: the power transform and per-lead-time coefficient fitting.
//! - [`bma`]: exchangeable-group BMA fitted by a mean-corrected EM algorithm.
//! - [`emos`]: the truncated normal EMOS reference fitted by CRPS minimisation.
//! - [`verification`]: CRPS, skill scores, intervals, PIT, ranks, DM and KS tests.
//! - [`pipeline`]: data files, rolling windows, batch runs and synthetic data.

// Published coefficients are kept at their printed precision, and negated
// comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod bma;
pub mod boxcox;
pub mod distributions;
pub mod emos;
pub mod error;
pub mod optim;
pub mod pipeline;
pub mod quadrature;
mod serde_float;
pub mod special;
pub mod verification;

pub use error::{Error, Result};
