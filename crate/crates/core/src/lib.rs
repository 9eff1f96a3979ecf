//! Nonlinear filtering laboratory for wrong-prior stability experiments.
//!
//! The library implements the discrete-time Bayes filter for hidden Markov
//! models, runs it side by side from the true initial law `ν` and a mismatched
//! law `ν̄`, and measures how fast the two conditional distributions forget
//! the disagreement. It ships:
//!
//! * [`measure`] — probability measures on finite alphabets and quadrature
//!   grids, with total variation, expectations and density ratios.
//! * [`models`] — signal kernels, observation channels and the model builders
//!   used by the experiments (finite HMMs, multiplicative-noise volatility
//!   models, additive-noise observation models).
//! * [`sg`] — the serial Gaussian prior family and the heavy-tailed
//!   multiplicative observation noise, with their closed-form constants.
//! * [`filter`] — the filter recursion, one-step predictors, observation-path
//!   likelihood ratios and grid discretization of continuous models.
//! * [`oracle`] — independent ground truths: exhaustive path enumeration for
//!   small finite models and the exact Kalman recursion for the
//!   linear-Gaussian case.
//! * [`stability`] — mixing constants, moment matrices, the observation-side
//!   integral-equation solver and diagnostic condition reports.
//! * [`series`] — Monte-Carlo and exact-enumeration estimates of the
//!   per-step stability metrics.
//! * [`harness`] — declarative experiment configs, deterministic seeding,
//!   CSV/manifest output and the canned experiment set.
//! * [`reproduce`] — the end-to-end verification table driven by the canned
//!   experiments.
//!
//! Everything is deterministic given a master seed: trials derive their
//! generators from `(master seed, trial index)` and aggregation runs in a
//! fixed order, so reruns are byte-identical regardless of worker count.

use thiserror::Error;

pub mod filter;
pub mod harness;
pub mod measure;
pub mod models;
pub mod numeric;
pub mod oracle;
pub mod reproduce;
pub mod series;
pub mod sg;
pub mod stability;

pub use filter::{FilterTrajectory, GridSpec, RhoSeries};
pub use measure::{DensityRatio, Distribution, FiniteDistribution, GridDistribution};
pub use models::{HmmModel, ObservationChannel, SignalKernel};
pub use series::StabilitySeries;
pub use stability::{ConditionReport, MixingReport, MomentMatrix};

/// Errors shared across the crate.
///
/// Filtering degeneracies (`ZeroLikelihood`, `ZeroRho`) are first-class
/// signals rather than silent clamps: they witness an inadmissible
/// initialization or a grid that truncated too much mass.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distributions live on different supports: {0}")]
    MismatchedSupport(String),
    #[error("total mass is zero, cannot normalize")]
    ZeroMass,
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("absolute continuity violated: mass {mass} at {point} where the reference law vanishes")]
    NotAbsolutelyContinuous { point: String, mass: f64 },
    #[error("result is not finite: {0}")]
    NonFiniteResult(String),
    #[error("not a stochastic matrix: {0}")]
    BadStochasticMatrix(String),
    #[error("unsupported observation noise family: {0}")]
    UnsupportedNoiseFamily(String),
    #[error("power iteration did not converge (reducible or periodic kernel)")]
    NoConvergence,
    #[error("zero likelihood at step {step}: every state in the support assigns density 0 to the observation")]
    ZeroLikelihood { step: usize },
    #[error("likelihood ratio undefined at step {step}: the path is impossible under the reference law")]
    ZeroRho { step: usize },
    #[error("grid truncation loses {lost:.3e} of the stationary mass (tolerance {tol:.1e})")]
    MassLeak { lost: f64, tol: f64 },
    #[error("moment quadrature failed to converge for moment order {order}")]
    MomentDivergence { order: usize },
    #[error("enumeration over {terms:.3e} signal paths exceeds the {cap:.1e}-term cap")]
    TooLarge { terms: f64, cap: f64 },
    #[error("observation characteristic function vanishes at t = {t} (|E e^{{itξ}}| = {magnitude:.3e})")]
    CharZero { t: f64, magnitude: f64 },
    #[error("series degenerated: {0}")]
    DegenerateSeries(String),
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("{failed} of {total} trials failed (first failure: {first})")]
    PartialFailure { failed: usize, total: usize, first: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
