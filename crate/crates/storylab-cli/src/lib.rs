//! Command-line front end for the story-corpus tooling: a TOML-configured
//! end-to-end pipeline plus one subcommand per stage for poking at artifacts.

pub mod config;
pub mod pipeline;
