//! Individualized treatment rules for bivariate right-censored survival outcomes.
//!
//! Per-arm lognormal AFT margins are fit with an adaptive prediction-powered IPCW
//! estimating equation, coupled by a copula, and a softmax network is trained to
//! maximize the estimated joint survival at a target time pair.

pub mod censoring;
pub mod copula;
pub mod data;
pub mod error;
pub mod forest;
pub mod marginal;
pub mod model_file;
pub mod normal;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision policy network used by the fitting pipeline.
pub type PolicyNet = policy::PolicyNetwork<f64>;
pub type PolicyNet32 = policy::PolicyNetwork<f32>;
pub type PolicySample = policy::PolicySample<f64>;
