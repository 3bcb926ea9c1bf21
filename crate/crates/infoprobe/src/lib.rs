//! Manifest IO, the probing pipeline, reports and charts on top of
//! [`infoprobe_core`].

pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod chart;
pub mod validation;
