//! Benchmark runner around `volprompt-core`: run configuration, the
//! parallel session driver, protocol conformance checks and reports.

pub mod commands;
pub mod config;
pub mod conformance;
pub mod error;
pub mod report;
pub mod runner;

pub use error::{BenchError, Result};
