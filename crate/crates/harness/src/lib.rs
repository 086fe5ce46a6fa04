//! Experiment harness: configuration, batch runs, reports and parameter
//! checks around `obbo-core`.

pub mod config;
pub mod report;
pub mod run;
pub mod streams;
pub mod validate;

pub use config::HarnessConfig;
pub use run::{run_config, Manifest, RunOptions};
