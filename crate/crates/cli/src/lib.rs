//! Benchmark driver behind the `snapkit` binary.

pub mod config;
pub mod matrix;
pub mod run;

pub use config::{BenchConfig, Mode, Selected, OUT_ENV};
pub use matrix::{run_matrix, MatrixRow, Sweep};
pub use run::{available_memory, required_memory, run_bench, BenchOutcome};
