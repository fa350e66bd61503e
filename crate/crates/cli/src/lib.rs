//! Pipeline driver behind the `vidgp` binary: run settings, in-process
//! stages and the file-based subcommands.

pub mod commands;
pub mod pgm;
pub mod pipeline;
pub mod settings;

pub use settings::{Method, RunConfig};
