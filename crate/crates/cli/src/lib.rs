//! Configuration, data files, parallel drivers and subcommands of the
//! `deconv-ht` command-line tool.
//!
//! Exit codes: 0 on success, 1 when an estimation or simulation fails, 2 for
//! usage, configuration and input errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;
pub mod parallel;

pub use error::{CliError, CliResult};
