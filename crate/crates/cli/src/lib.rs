//! Command implementations behind the `gwdial` binary.

pub mod analyze;
pub mod bound;
pub mod config;
pub mod error;
pub mod eval;
pub mod play;
pub mod train;

pub use error::{CliError, Result};
