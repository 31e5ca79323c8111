//! Batch front end: a TOML run config drives one of three stages
//! (`pre-analysis`, `infer`, `analyse`) over the built-in models or any
//! external program that speaks the CSV-over-stdio protocol in [`external`].

pub mod config;
pub mod external;
pub mod manifest;
pub mod observed;
pub mod pipeline;

pub use config::{load, parse_str, Algorithm, ConfigError, ConfigIssue, ModelKind, Overrides, RunConfig, Stage};
pub use manifest::Manifest;
pub use pipeline::{run_pipeline, PipelineError, RunOutcome, Status};
