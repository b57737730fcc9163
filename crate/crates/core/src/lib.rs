//! Process optimization engine for design-of-experiments data.
//!
//! The crate is organised along the flow of a tuning campaign:
//!
//! - [`ingestion`] parses machine/experiment files into a raw [`Dataset`],
//! - [`cleaning`] reduces it into a consistent table and records every action
//!   in a replayable [`cleaning::ReductionLedger`],
//! - [`selection`] ranks inputs and picks a compact feature subset,
//! - [`surrogate`] trains independent per-output regressors,
//! - [`moo`] runs the steerable multi-objective optimizer and computes front
//!   metrics (hypervolume, spacing, Wasserstein stability).
//!
//! Everything stochastic takes an explicit `u64` seed; identical inputs and
//! seeds give bit-identical results.

pub mod cleaning;
pub mod error;
pub mod ingestion;
pub mod moo;
pub mod normalize;
pub mod seed;
pub mod selection;
pub mod stats;
pub mod surrogate;
pub mod types;

pub use error::{Error, Result};
pub use normalize::{normalize, NormalizationRecord, NormalizedTable};
pub use stats::{adjusted_r2, rmse};
pub use types::{
    Dataset, Direction, ExperimentRow, MetricReport, ObjectiveSpec, OutputSpec, ParameterKind,
    ParameterSpec,
};

/// Absolute tolerance used for floating point comparisons unless a caller
/// states otherwise.
pub const ABS_TOL: f64 = 1e-9;
