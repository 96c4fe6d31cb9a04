//! Command-line front end and local HTTP API.

pub mod args;
pub mod commands;
pub mod server;
pub mod setup;
