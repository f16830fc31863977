//! Spatio-temporal crime occurrence prediction over small census regions.
//!
//! The pipeline runs from raw records to evaluation tables:
//! [`ingest`] parses the six input datasets, [`geodata`] maps events onto
//! regions, [`features`] derives per-region feature groups, [`dataset`]
//! builds the labelled region × time grid and fold windows, [`learn`] holds
//! the classifiers, and [`eval`] runs time-constrained cross-validation and
//! renders report tables. [`synth`] generates synthetic cities with planted
//! effects for end-to-end runs.

pub mod dataset;
pub mod eval;
pub mod features;
pub mod geodata;
pub mod ingest;
pub mod learn;
pub mod seed;
pub mod synth;
