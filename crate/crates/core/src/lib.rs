//! Adoption analytics for open-weight model releases: download snapshot
//! ingestion, series cleaning, relative adoption scores, derivative and
//! benchmark rollups.

pub mod benchmarks;
pub mod config;
pub mod derivatives;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod ram;
pub mod registry;
pub mod report;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
