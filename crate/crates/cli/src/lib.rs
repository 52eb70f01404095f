//! Library surface of the `harmsim` CLI: configuration resolution and the
//! subcommand implementations, exposed so integration tests can drive them
//! in-process.

pub mod commands;
pub mod config;
