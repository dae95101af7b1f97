//! Effect estimation for choice experiments.
//!
//! Trial records are reshaped to two product rows per trial, fitted with
//! linear probability models that absorb trial fixed effects, and
//! summarized as 1 vs 0 marginal contrasts in percentage points with
//! cluster-robust standard errors and Benjamini-Hochberg adjustment.

pub mod analysis;
pub mod bh;
pub mod curve;
pub mod emm;
pub mod frame;
pub mod lpm;
pub mod rows;
pub mod vcov;

use thiserror::Error;

pub use analysis::{analyze, AnalysisSpec, EffectsReport};
pub use bh::{bh_adjust, bh_step_up};
pub use curve::{price_advantage_curve, PriceCurve};
pub use emm::{emm_contrasts, EffectEstimate};
pub use frame::Frame;
pub use lpm::{fit_lpm, FitResult, ModelSpec};
pub use rows::{reshape_trials, rows_to_frame, ProductRow};
pub use vcov::{cluster_vcov, SmallSample, Vcov};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown reference: {0}")]
    UnknownReference(String),
    #[error("need at least two groups, found {0}")]
    TooFewGroups(usize),
    #[error("every design column is collinear: {0:?}")]
    AllCollinear(Vec<String>),
    #[error("{rows} rows cannot identify {columns} columns")]
    TooFewRows { rows: usize, columns: usize },
    #[error("normal equations are singular")]
    Singular,
    #[error("clustering dimension `{0}` has a single cluster")]
    DegenerateCluster(String),
    #[error("factor `{0}` is not in the design")]
    FactorNotInDesign(String),
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
}
