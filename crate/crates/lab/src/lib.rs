//! Experiment driver: configuration, pipelines, output files and the
//! acceptance checks behind `privlab validate`.

pub mod checks;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod output;
pub mod pipeline;
