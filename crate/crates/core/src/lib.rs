//! Label-free ranking of disentangled representations.
//!
//! Models trained with different seeds are compared pairwise through latent
//! similarity matrices; models whose informative latents line up one-to-one
//! with those of their peers score highly. Supervised metrics (β-VAE,
//! FactorVAE, MIG, DCI) and a simulator of encoders with known ground truth
//! are included for validation.

pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod registry;
pub mod similarity;
pub mod simulator;
pub mod stats;
pub mod udr;

pub use error::{Error, Result};
pub use model::{
    Factor, FactorGrid, FactorSpec, LatentResponse, ModelRecord, ModelSet, Provenance, ScoreRow, ScoreTable,
};
