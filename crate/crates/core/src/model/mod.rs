//! Domain types, priors, constraint transforms, the softmax/LMC field
//! construction and the zero-inflated observation likelihood.

pub mod catalog;
pub mod likelihood;
pub mod params;
pub mod prior;
pub mod profiles;

pub use catalog::{ItemCatalog, ItemRecord};
pub use likelihood::{build_profile_loglik, lmc_intensities, loglik_binary, softmax_fields, ItemNodes};
pub use params::{
    build_constrain, build_constrain_locations, build_constrain_psi, constrain, log_jacobian,
    unconstrain, ConstrainedNodes, GlobalParams, LocationNodes, ParamLayout, PsiNodes,
};
pub use prior::{build_log_prior, gamma_logpdf, log_prior, PriorConfig};
pub use profiles::{AnchorProfile, FloatProfile, ProfileSet, Region};
