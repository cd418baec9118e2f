//! Independent reference implementations used to validate the main build.

pub mod checks;
mod fd;
pub mod naive;

pub use checks::{verify_suite, OracleReport};
pub use fd::{finite_diff_gradient, max_relative_error, scaled_max_error};
