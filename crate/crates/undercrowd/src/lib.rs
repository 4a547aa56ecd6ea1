//! File formats, the weather archive client and the command line for the
//! undercrowding pipeline in `undercrowd_core`.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod weather;

pub use error::{AppError, Result};
