//! Configuration, subcommands and the reproduction suite behind the
//! `xmonsim` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod reproduce;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
