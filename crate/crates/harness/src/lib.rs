//! Experiment drivers, configuration and I/O for the `eggroll` CLI.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod experiments;
pub mod fitness;
pub mod output;
