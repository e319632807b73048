//! Config-driven experiment runner: parses a sectioned key=value config,
//! executes the teacher -> fusion -> distillation -> evaluation pipeline, and
//! writes a metrics JSON document plus plot-data CSVs.

pub mod config;
pub mod error;
pub mod plots;
pub mod runner;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{CliError, Result};
pub use runner::{comparable_json, run_and_write, run_experiment, MetricsDocument};
