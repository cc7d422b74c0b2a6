//! Experiment runner for the exposure-control lab: configuration, the
//! closed-loop evaluation, reaction-speed and training drivers, and their
//! CSV / SVG reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod react;
pub mod sequences;
pub mod train;

pub use commands::{run, Command, Manifest};
pub use config::RunConfig;
pub use error::{HarnessError, Result};
