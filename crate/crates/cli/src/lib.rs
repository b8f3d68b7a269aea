//! Command-line front end: CSV ingestion, argument handling and the
//! `select`, `simulate`, `ratio` and `verify` commands.

pub mod args;
pub mod commands;
pub mod ingest;

pub use args::Cli;
pub use commands::run;
pub use ingest::{ingest_csv, IngestError, Ingested};
