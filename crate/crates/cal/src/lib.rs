//! Command-line front end for contrastive association learning: file
//! formats, run configuration, manifests and the commands themselves.

pub mod ablation;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{CliError, Result};
