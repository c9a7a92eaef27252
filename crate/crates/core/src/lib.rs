//! Graph and hypergraph models for multi-agent trajectory forecasting.
//!
//! A diffusion-graph forecaster produces per-mode futures and intention
//! probabilities; a hypergraph relational encoder and a latent-variable
//! generator turn them into sampled joint futures.

pub mod encoder;
pub mod error;
pub mod generator;
pub mod giraffe;
pub mod graph;
pub mod hypergraph;
pub mod rhino;
pub mod scenario;
pub mod selection;

pub use error::{CoreError, Result};
