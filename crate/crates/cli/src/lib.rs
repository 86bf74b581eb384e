//! Library side of the `noisylab` command: config parsing, sweeps, reports
//! and diagnostics over run directories.

pub mod config;
pub mod diagnose;
pub mod inject;
pub mod report;
pub mod sweep;

pub use config::ExperimentConfig;

/// Exit status for a run that failed or a report that could not be built.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status of `diagnose` when the snapshot has only one kind of label.
pub const EXIT_DEGENERATE: u8 = 3;
