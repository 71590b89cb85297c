//! Command-line front end: configuration, the subcommands, their output
//! layout and a mock annealer for the remote sampler protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod server;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
