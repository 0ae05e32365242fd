//! CSV ingestion and synthetic series generation.

mod ingest;
mod synthetic;

pub use ingest::{ingest, ingest_reader, write_frame, Ingested, REQUIRED_COLUMNS};
pub use synthetic::{generate_synthetic, Regime, SyntheticSpec, MACRO_NAMES};
