//! Experiment runner for `hudn-core`: configuration files, on-disk formats,
//! wall-clock timing, thread-pool batch execution and the `hudn` CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod formats;
