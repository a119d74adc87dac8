//! Simulation and analysis of incentive fairness in proof-of-work and
//! proof-of-stake block proposer selection.
//!
//! The [`model`] module holds the shared types, [`protocols`] steps each
//! selection rule, [`engine`] runs seeded Monte Carlo experiments, [`analytics`]
//! evaluates fairness metrics and closed-form bounds, and [`oracle`] computes
//! exact small-horizon distributions used for validation.

pub mod analytics;
pub mod cli;
pub mod engine;
pub mod error;
pub mod model;
pub mod oracle;
pub mod protocols;

pub use engine::{
    derive_seed, run_experiment, run_experiment_with_threads, run_trial, CheckpointStats,
    ConvergenceTime, ExperimentSpec, FairnessReport,
};
pub use error::{Error, Result};
pub use model::{
    Checkpoint, FairArea, FairnessParams, MinerState, MlposMode, ProtocolKind, ProtocolSpec,
    ShareVector,
};
pub use oracle::ExactDist;
