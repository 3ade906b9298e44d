//! Command-line front end: run configuration, the pipeline stages, and the
//! file-backed commands built on them.

pub mod config;
pub mod pipeline;
pub mod stages;
