//! Experiment grid, file formats and reports on top of `circuitlab-core`.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{LabError, Result};
