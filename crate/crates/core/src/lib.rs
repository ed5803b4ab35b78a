//! Compound Poisson-Lognormal annual-loss models with reporting thresholds.
//!
//! Engines for the annual-loss distribution, the three ways of handling
//! truncated data (unbiased, shifted, naive), maximum-likelihood fitting with
//! Fisher-information errors, posterior-predictive quantiles, and study sweeps.

pub mod bayes;
pub mod compound;
pub mod dist;
pub mod error;
pub mod fitting;
pub mod quad;
pub mod special;
pub mod study;
pub mod truncation;

pub use compound::{CompoundModel, Engine, QuantileReport};
pub use dist::{FrequencyParams, SeverityKind, SeverityParams, TruncationSpec};
pub use error::{Error, Result};
