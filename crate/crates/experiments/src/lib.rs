//! Experiment runner for potential-field metric learning: configuration,
//! single runs, and the subcommands behind the `pfml` binary.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod runner;
