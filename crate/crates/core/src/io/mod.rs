//! File formats: spectra ingestion, exclusion bands, result tables and run
//! configuration.

pub mod bands;
pub mod config;
pub mod spectra;
pub mod tables;

pub use bands::{default_bands, parse_bands, Band};
pub use config::RunConfig;
pub use spectra::{ingest_csv, ingest_reader, Group, IngestOptions, Ingested};
