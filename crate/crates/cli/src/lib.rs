//! Library surface of the experiment pipeline, used by the `surfrec`
//! binary and by integration tests that drive whole runs in-process.

pub mod commands;
pub mod config;
