//! Kernels, inducing-point conditioning, Monte-Carlo likelihood bounds and
//! the approximate/exact joint densities.

pub mod conditional;
pub mod inducing;
pub mod joint;
pub mod kernel;

pub use conditional::{conditional_gaussian, stabilized_cholesky};
pub use inducing::InducingGrid;
pub use joint::{exact_joint_logpdf, FieldModel, FieldNoise, DEFAULT_MC_SAMPLES};
pub use kernel::{kernel_matrix, KernelConfig};
