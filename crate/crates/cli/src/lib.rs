//! Pipeline commands behind the `clothrecon` binary.

pub mod commands;
pub mod config;
pub mod exit;
pub mod lock;
pub mod pipeline;

/// Environment variable fixing the worker thread count.
pub const THREADS_ENV: &str = "CLOTHRECON_THREADS";
