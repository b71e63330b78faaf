//! File formats, parallel execution and the command-line driver for
//! [`ivregime_core`].

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod fmt;
pub mod modelfile;
pub mod par;

pub use error::CliError;
