//! Experiment configuration and sweep execution for the single-module
//! benchmark CLI.

pub mod config;
pub mod runner;
