//! Conditional-flow variational meta-posterior.

pub mod flow;
pub mod vmp;

pub use flow::{
    build_flow_forward, flow_forward_f64, flow_inverse_f64, flow_sample_and_logpdf, FlowArch,
    FlowConfig, TransformKind,
};
pub use vmp::{
    elbo_bayes_stopgrad, elbo_pow, make_bundle, train_vmp, utility_and_grads, vmp_posterior,
    NoiseBundle, RhoConfig, SgdConfig, TrainedVmp, Vmp, VmpConfig, VmpDraws,
};
