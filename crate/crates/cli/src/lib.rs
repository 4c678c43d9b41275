//! Configuration, orchestration and reporting behind the `cbsprob` binary.

pub mod config;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, Mode, Overrides, RunConfig};
pub use run::{run, Outcome, RunError};
