//! File formats and command implementations for the s2gan driver.
//!
//! The engine lives in `s2gan-core`; this crate adds everything that needs
//! `std`: PNM images, checkpoints, configs, loss logs and the commands
//! behind the `s2gan` binary.

pub mod commands;
pub mod error;
pub mod io;

pub use error::{Error, Result};
