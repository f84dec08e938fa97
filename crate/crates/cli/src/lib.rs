//! `osu` command line: evaluation, captioning, scene building, queries,
//! benchmarks and the HTTP service.

pub mod commands;
pub mod config;
pub mod service;

pub use commands::{run, Cli, CliError, ExitCode};
