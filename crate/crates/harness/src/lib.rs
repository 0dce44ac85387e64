//! Experiment driver for the `pdmd` toolkit: TOML-configured grid searches
//! over the synthetic regression benchmark, trial CSVs, best-grid-point
//! summaries, and the library side of the `pdmd` CLI.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod record;

pub use config::{Algorithm, ExperimentSpec, GridPoint};
pub use error::{HarnessError, Result};
pub use experiment::run_experiment;
pub use record::{read_records, summarize, write_records, CellSummary, TrialRecord};
