//! Controlled product-choice experiments for web agents.
//!
//! The crate covers everything up to the trial records: loading and filtering
//! the product catalog, building two-alternative product pairs, rewriting
//! observations with nudge and price interventions, the deterministic
//! two-tab shopping environment, agent policies, and the experiment grid and
//! batch runner. Statistical analysis lives in `choicebench-stats`.

pub mod catalog;
pub mod digest;
pub mod episode;
pub mod grid;
pub mod interventions;
pub mod page;
pub mod pairing;
pub mod policy;
pub mod records;
pub mod runner;
pub mod shopsim;
pub mod synth;

pub use catalog::{Catalog, FilterRules, Price, Product};
pub use grid::{Condition, ExperimentConfig, ExperimentRegime};
pub use interventions::{Intervention, Nudge, Slot};
pub use pairing::{PairConstraints, PairRegime, ProductPair};
pub use records::{Outcome, TrialRecord};
