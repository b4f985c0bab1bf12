//! Corpus formats, checkpoints, configuration and the command line around
//! [`ctrlgen_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod synth;

pub use ctrlgen_core;
pub use error::CliError;
