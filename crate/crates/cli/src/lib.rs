//! Batch front end for the solver: config parsing, deterministic output
//! artifacts (CSV, manifests, field dumps, plot scripts), and the invariant
//! check suite.

pub mod checks;
pub mod config;
pub mod report;
