//! Command implementations and configuration of the `diffcast` binary.

pub mod commands;
pub mod config;
