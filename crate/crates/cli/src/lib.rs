//! File formats, configuration and commands around `dualid-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
