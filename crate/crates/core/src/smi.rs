//! The model interface shared by the nested sampler and the variational
//! meta-posterior.
//!
//! Both inference backends work on the same two tape builders: the powered
//! joint over (psi, theta-tilde) at a given influence, and the float-stage
//! conditional term log p(Y | psi, theta) + log p(theta) with psi supplied
//! either as differentiable nodes or as detached values (the stop-gradient
//! route). Everything is expressed on unconstrained coordinates with the
//! transform Jacobians included, so flows and samplers share one density.

use crate::error::Result;
use crate::grad::{Node, NodeRange, Tape};
use crate::rng::StreamKey;

/// How psi enters a conditional build: as live tape nodes, or as detached
/// constants (severing every gradient path through psi).
pub enum PsiSource<'a> {
    Nodes(NodeRange),
    Values(&'a [f64]),
}

/// Domain map applied coordinate-wise when reporting draws (and matching
/// the flow terminal block).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    Identity,
    /// x = exp(u)
    Exp,
    /// x = sigmoid(u)
    Sigmoid,
    /// x = scale * sigmoid(u)
    ScaledSigmoid(f64),
}

impl Terminal {
    pub fn apply(&self, u: f64) -> f64 {
        match *self {
            Terminal::Identity => u,
            Terminal::Exp => u.exp(),
            Terminal::Sigmoid => sigmoid(u),
            Terminal::ScaledSigmoid(s) => s * sigmoid(u),
        }
    }

    pub fn invert(&self, x: f64) -> f64 {
        match *self {
            Terminal::Identity => x,
            Terminal::Exp => x.ln(),
            Terminal::Sigmoid => logit(x),
            Terminal::ScaledSigmoid(s) => logit(x / s),
        }
    }

    /// log |dx/du| at u.
    pub fn log_abs_det(&self, u: f64) -> f64 {
        match *self {
            Terminal::Identity => 0.0,
            Terminal::Exp => u,
            Terminal::Sigmoid => {
                let s = sigmoid(u);
                (s * (1.0 - s)).ln()
            }
            Terminal::ScaledSigmoid(sc) => {
                let s = sigmoid(u);
                sc.ln() + (s * (1.0 - s)).ln()
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A two-module model amenable to semi-modular inference.
pub trait SmiModel: Sync {
    /// Frozen Monte-Carlo noise consumed by the density builders.
    type Noise: Send + Sync;

    /// Dimension of the shared-parameter block psi (unconstrained).
    fn psi_dim(&self) -> usize;

    /// Dimension of the suspect-module parameter block theta
    /// (unconstrained).
    fn theta_dim(&self) -> usize;

    /// Draw a fresh noise set from the stream addressed by `key`.
    fn make_noise(&self, key: StreamKey) -> Self::Noise;

    /// Build the log of the powered joint
    /// `log p(Z | psi) + eta log p(Y | psi, theta) + log p(psi, theta)`
    /// on unconstrained coordinates, transform Jacobians included.
    fn build_pow(
        &self,
        t: &mut Tape,
        psi: NodeRange,
        theta: NodeRange,
        eta: f64,
        noise: &Self::Noise,
    ) -> Result<Node>;

    /// Build the float-stage conditional term
    /// `log p(Y | psi, theta) + log p(theta)` (Jacobian of theta included);
    /// the psi-dependent normalizer is omitted as it cancels in both the
    /// sub-chain acceptance ratio and the stop-gradient ELBO gradient.
    fn build_float_term(
        &self,
        t: &mut Tape,
        psi: PsiSource<'_>,
        theta: NodeRange,
        noise: &Self::Noise,
    ) -> Result<Node>;

    /// log p(psi) (plus psi transform Jacobian) at detached values: the
    /// psi-only part of the Bayes-stage density, needed for ELBO values
    /// where the gradient path is severed.
    fn logp_psi_value(&self, psi_unc: &[f64]) -> f64;

    /// Feature map of psi used as flow conditioner context.
    fn psi_feature_dim(&self) -> usize;

    fn psi_features(&self, psi_unc: &[f64]) -> Vec<f64>;

    /// Feature map as tape nodes (gradients flow through the features).
    fn build_psi_features(&self, t: &mut Tape, psi: NodeRange) -> Vec<Node>;

    /// Domain map per psi coordinate.
    fn psi_terminals(&self) -> Vec<Terminal>;

    /// Domain map per theta coordinate.
    fn theta_terminals(&self) -> Vec<Terminal>;
}

/// Stage-1 target: the powered joint over (psi, theta) at fixed influence.
pub struct PowTarget<'a, M: SmiModel> {
    model: &'a M,
    eta: f64,
    noise: M::Noise,
    noise_seed: u64,
}

impl<'a, M: SmiModel> PowTarget<'a, M> {
    pub fn new(model: &'a M, eta: f64, noise_seed: u64, initial_iteration: u64) -> Self {
        let noise = model.make_noise(StreamKey::new(
            noise_seed,
            crate::rng::Domain::FieldNoise,
            initial_iteration,
        ));
        PowTarget {
            model,
            eta,
            noise,
            noise_seed,
        }
    }

    pub fn noise(&self) -> &M::Noise {
        &self.noise
    }

    fn split(&self, r: NodeRange) -> (NodeRange, NodeRange) {
        let p = self.model.psi_dim() as u32;
        (
            NodeRange {
                start: r.start,
                len: p,
            },
            NodeRange {
                start: r.start + p,
                len: r.len - p,
            },
        )
    }
}

impl<M: SmiModel> crate::grad::DifferentiableTarget for PowTarget<'_, M> {
    fn dim(&self) -> usize {
        self.model.psi_dim() + self.model.theta_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut t = Tape::new();
        let r = t.inputs(x);
        let (psi, theta) = self.split(r);
        match self.model.build_pow(&mut t, psi, theta, self.eta, &self.noise) {
            Ok(out) => t.val(out),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut t = Tape::new();
        let r = t.inputs(x);
        let (psi, theta) = self.split(r);
        match self.model.build_pow(&mut t, psi, theta, self.eta, &self.noise) {
            Ok(out) => {
                let v = t.val(out);
                if v.is_finite() {
                    t.backward(out);
                    grad.copy_from_slice(t.grads(r));
                }
                v
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn refresh(&mut self, iteration: u64) {
        self.noise = self.model.make_noise(StreamKey::new(
            self.noise_seed,
            crate::rng::Domain::FieldNoise,
            iteration,
        ));
    }
}

/// Stage-2 target: the float-location conditional at a fixed psi draw.
pub struct FloatTarget<'a, M: SmiModel> {
    model: &'a M,
    psi: Vec<f64>,
    noise: M::Noise,
    noise_seed: u64,
    noise_offset: u64,
}

impl<'a, M: SmiModel> FloatTarget<'a, M> {
    /// `noise_offset` separates the stream indices of distinct sub-chains.
    pub fn new(model: &'a M, psi: Vec<f64>, noise_seed: u64, noise_offset: u64) -> Self {
        let noise = model.make_noise(StreamKey::new(
            noise_seed,
            crate::rng::Domain::Stage2,
            noise_offset,
        ));
        FloatTarget {
            model,
            psi,
            noise,
            noise_seed,
            noise_offset,
        }
    }
}

impl<M: SmiModel> crate::grad::DifferentiableTarget for FloatTarget<'_, M> {
    fn dim(&self) -> usize {
        self.model.theta_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut t = Tape::new();
        let theta = t.inputs(x);
        match self
            .model
            .build_float_term(&mut t, PsiSource::Values(&self.psi), theta, &self.noise)
        {
            Ok(out) => t.val(out),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut t = Tape::new();
        let theta = t.inputs(x);
        match self
            .model
            .build_float_term(&mut t, PsiSource::Values(&self.psi), theta, &self.noise)
        {
            Ok(out) => {
                let v = t.val(out);
                if v.is_finite() {
                    t.backward(out);
                    grad.copy_from_slice(t.grads(theta));
                }
                v
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn refresh(&mut self, iteration: u64) {
        self.noise = self.model.make_noise(StreamKey::new(
            self.noise_seed,
            crate::rng::Domain::Stage2,
            self.noise_offset.wrapping_add(iteration),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_round_trip() {
        let terms = [
            Terminal::Identity,
            Terminal::Exp,
            Terminal::Sigmoid,
            Terminal::ScaledSigmoid(0.9),
        ];
        for t in terms {
            for &u in &[-1.3, 0.0, 0.7, 2.0] {
                let x = t.apply(u);
                assert!((t.invert(x) - u).abs() < 1e-10, "{t:?} at {u}");
            }
        }
    }

    #[test]
    fn terminal_log_det_matches_fd() {
        let terms = [
            Terminal::Identity,
            Terminal::Exp,
            Terminal::Sigmoid,
            Terminal::ScaledSigmoid(0.9),
        ];
        let h = 1e-6;
        for t in terms {
            for &u in &[-0.8, 0.3, 1.1] {
                let fd = ((t.apply(u + h) - t.apply(u - h)) / (2.0 * h)).abs().ln();
                assert!((t.log_abs_det(u) - fd).abs() < 1e-6, "{t:?} at {u}");
            }
        }
    }
}
