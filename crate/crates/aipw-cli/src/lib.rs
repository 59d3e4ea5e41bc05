//! Command-line front end for the `aipw` estimation library: CSV ingestion,
//! flag parsing, and JSON report construction for the `aipw` binary.

pub mod args;
pub mod commands;
pub mod ingest;

pub use args::{Cli, Command};
pub use commands::run;
