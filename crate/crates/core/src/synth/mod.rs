//! Synthetic data generation and the conjugate Gaussian toy model.

pub mod generate;
pub mod toy;

pub use generate::{contaminate, generate, FieldRaster, SynthConfig, SynthTruth};
pub use toy::ToyModel;
