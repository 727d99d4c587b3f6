//! Experiment drivers for osl-core.

pub mod commands;
pub mod config;
