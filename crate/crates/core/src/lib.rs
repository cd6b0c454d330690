//! Forensic statistics for code generators: training-data membership audits,
//! machine-generated code detection, and source attribution by
//! classification, single-instance scoring and kernel two-sample testing.

pub mod corpus;
pub mod error;
pub mod hyptest;
pub mod kernel;
pub mod learners;
pub mod metrics;
pub mod pipelines;
pub mod scoring;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
