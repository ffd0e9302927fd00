//! Data ingestion, the tensor file container, run configuration, and
//! run-record emission.

pub mod config;
pub mod image;
pub mod run_record;
pub mod tensor_file;

pub use config::{build_experiment, Experiment, RunConfigFile};
