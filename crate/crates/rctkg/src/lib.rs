//! Batch simulation, experiment presets, file formats, command-line front end
//! and HTTP trial service built on [`rctkg_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod oracle;
pub mod presets;
pub mod replicate;
pub mod service;
pub mod statefile;
pub mod table;

pub use error::CliError;
pub use rctkg_core as core;
