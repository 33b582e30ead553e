//! File formats, a stratum-parallel driver and the `fairrepair` command-line
//! tool on top of [`fairrepair_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod parallel;
pub mod report;

pub use error::{CliError, Result};
