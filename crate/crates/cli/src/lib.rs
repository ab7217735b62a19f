//! File formats, configuration, and the command implementations behind the
//! `vidsum` binary. Everything is exposed as a library so integration tests
//! drive the exact code paths the binary runs.

pub mod commands;
pub mod config;
pub mod formats;
