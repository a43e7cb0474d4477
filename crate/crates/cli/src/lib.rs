//! Command implementations behind the `gatt` binary. Every command returns a
//! [`report::Report`] of `key=value` lines whose `pass` flag decides the
//! exit status.

pub mod attend;
pub mod equivariance;
pub mod gradcheck;
pub mod parity;
pub mod report;
pub mod stack;
pub mod thm1;
pub mod train;

pub use report::{ElementError, EquivarianceReport, Report};

/// Exit status for a report that holds.
pub const EXIT_PASS: i32 = 0;
/// Exit status for a property that failed.
pub const EXIT_FAIL: i32 = 1;
/// Exit status for bad arguments, configuration or input files.
pub const EXIT_USAGE: i32 = 2;
