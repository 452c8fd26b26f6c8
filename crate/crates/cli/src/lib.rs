//! Pipeline orchestration for the `metatrip` command-line tool.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod pipeline;
pub mod synth;
