//! Pipeline orchestration for the process-optimization engine.
//!
//! A run goes ingest → clean → select → train → optimize → recipes. Each
//! stage persists its artifacts in the run directory, so any completed
//! stage is reused on resume and every artifact is reproducible from the
//! raw sources, the configuration and the seed.
//!
//! - [`config`] parses and validates the configuration document,
//! - [`store`] owns the run directory layout and the run document,
//! - [`run`] drives the stages,
//! - [`recipe`] rebuilds full recipes through the reduction ledger,
//! - [`slice`] computes prediction slices for the dashboard,
//! - [`service`] serves the `/api/v1` HTTP interface,
//! - [`golden`] generates the bundled synthetic fixture.

pub mod config;
pub mod error;
pub mod golden;
pub mod recipe;
pub mod run;
pub mod service;
pub mod slice;
pub mod store;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result, Stage};
pub use recipe::{reconstruct_recipe, Reconstruction, Recipe};
pub use run::{advance, open_run, run_pipeline, RunHooks};
pub use slice::{decision_slice, DecisionSlice};
pub use store::{RecordHandle, RunDir, RunRecord, RunStatus};
