//! Network front ends for the prediction engine: the REST service, TCP line
//! ingestion, the weather-service client and its fixture, and the pieces of
//! the `wtstream` command-line tool.

pub mod api;
pub mod cli;
pub mod client;
pub mod ingest;
pub mod weather;
