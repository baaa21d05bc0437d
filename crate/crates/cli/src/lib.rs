//! Pipeline orchestration behind the `ovcal` binary.
//!
//! The binary itself is a thin argument parser; everything it does lives
//! here so the output formats stay testable.

pub mod artifacts;
pub mod commands;
pub mod method;
pub mod report;

pub use method::Method;
