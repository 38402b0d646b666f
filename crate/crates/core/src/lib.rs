//! Deterministic federated-learning simulator with targeted layer updates.
//!
//! * [`model`]: a small residual next-token model with analytic gradients.
//! * [`data`]: character corpora, client shards and batching.
//! * [`fed`]: server-side aggregation, change scoring and block selection.
//! * [`theory`]: loss-reduction bound checks on quadratic objectives.
//! * [`sim`]: the round loop, experiment presets and reporting.

pub mod data;
pub mod error;
pub mod fed;
pub mod model;
pub mod rng;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
