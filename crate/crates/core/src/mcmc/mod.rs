//! NUTS and the two-stage nested sampler for the semi-modular posterior,
//! with chain diagnostics.

pub mod diagnostics;
pub mod nested;
pub mod nuts;

pub use diagnostics::{diagnostics, ess, split_rhat, Diagnostics};
pub use nested::{smi_sample, SmiChain, SmiConfig};
pub use nuts::{nuts_run, NutsChain, NutsConfig};
