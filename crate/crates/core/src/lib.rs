pub mod classify;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod recommenders;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub mod riskeval;
pub mod service;
pub mod simulate;
