//! Files, experiments and the command line around `modelfuse-core`.

pub mod cli;
pub mod csvio;
pub mod error;
pub mod files;
pub mod harness;
pub mod manifest;

pub use error::{Error, Result};
