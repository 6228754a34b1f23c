//! Building demographically representative datasets from multiple sites,
//! and measuring how dataset composition shapes downstream group fairness.

pub mod demographics;
pub mod error;
pub mod fairness;
pub mod harness;
pub mod ingest;
pub mod learners;
pub mod population;
pub mod rng;
pub mod samplers;
pub mod theory;

pub use demographics::{
    distance, representativeness_distance, stepwise_mean_identity, CollectedDataset, Metric, Record,
    SensitiveVector, TargetVector,
};
pub use error::{Error, Result};
