//! Library surface of the `ofrl` CLI so integration tests can reach
//! the command implementations directly.

pub mod commands;
pub mod config;
pub mod output;
