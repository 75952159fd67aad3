//! Experiment runner for the `mcgdiff` sampler: JSON configs with command
//! line overrides, seeded experiments, CSV outputs and replayable manifests.

pub mod config;
pub mod experiments;
pub mod manifest;

pub use config::{ExperimentKind, Overrides, RunConfig};
pub use manifest::{Check, Manifest};
