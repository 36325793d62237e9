//! Library surface of the pipeline CLI, shared by the binary and the
//! acceptance suite.

pub mod config;
pub mod error;
pub mod manifest;
pub mod steps;
