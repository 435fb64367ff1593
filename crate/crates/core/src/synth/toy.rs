//! Conjugate Gaussian two-module toy model.
//!
//! Z_i ~ N(psi, sigma_z^2) for i = 1..n_z and Y_j ~ N(psi + theta,
//! sigma_y^2) for j = 1..n_y, with N(0, s0^2) and N(0, t0^2) priors. Every
//! semi-modular quantity has a closed form here, which makes the model the
//! validation oracle for both the nested sampler and the variational
//! meta-posterior. Likelihoods are expressed through the sufficient means
//! (z-bar, y-bar), so the evidence below is the normalizer of exactly the
//! density the samplers see.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grad::{Node, NodeRange, Tape};
use crate::rng::StreamKey;
use crate::smi::{PsiSource, SmiModel, Terminal};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub s0: f64,
    pub t0: f64,
    pub sigma_z: f64,
    pub sigma_y: f64,
    pub n_z: usize,
    pub n_y: usize,
    pub z_bar: f64,
    pub y_bar: f64,
}

impl Default for ToyModel {
    fn default() -> Self {
        ToyModel {
            s0: 1.0,
            t0: 1.0,
            sigma_z: 1.0,
            sigma_y: 1.0,
            n_z: 10,
            n_y: 10,
            z_bar: 1.0,
            y_bar: 3.0,
        }
    }
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean) * (x - mean) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

impl ToyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.t0 > 0.0 && self.sigma_z > 0.0 && self.sigma_y > 0.0)
            || self.n_z == 0
            || self.n_y == 0
        {
            return Err(Error::invalid("toy model scales and counts must be positive"));
        }
        Ok(())
    }

    fn prec_z(&self) -> f64 {
        self.n_z as f64 / (self.sigma_z * self.sigma_z)
    }

    fn prec_y(&self) -> f64 {
        self.n_y as f64 / (self.sigma_y * self.sigma_y)
    }

    /// Exact Gaussian power posterior over (psi, theta-tilde): precision
    /// assembled from the priors, the z-module and eta times the y-module,
    /// then densely solved.
    pub fn power_posterior(&self, eta: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.validate()?;
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid("eta must lie in [0, 1]"));
        }
        let pz = self.prec_z();
        let py = eta * self.prec_y();
        let mut lambda = DMatrix::zeros(2, 2);
        lambda[(0, 0)] = 1.0 / (self.s0 * self.s0) + pz + py;
        lambda[(0, 1)] = py;
        lambda[(1, 0)] = py;
        lambda[(1, 1)] = 1.0 / (self.t0 * self.t0) + py;
        let h = DVector::from_column_slice(&[pz * self.z_bar + py * self.y_bar, py * self.y_bar]);
        let cov = lambda
            .try_inverse()
            .ok_or_else(|| Error::numerical("singular toy precision"))?;
        let mean = &cov * h;
        Ok((mean, cov))
    }

    /// Stage-2 conditional p(theta | psi, Y): mean and variance.
    pub fn stage2_conditional(&self, psi: f64) -> (f64, f64) {
        let q = 1.0 / (self.t0 * self.t0) + self.prec_y();
        let mean = self.prec_y() * (self.y_bar - psi) / q;
        (mean, 1.0 / q)
    }

    /// Closed-form SMI marginal of theta at influence eta: theta is a
    /// linear-Gaussian function of the power-posterior psi.
    pub fn smi_marginal_theta(&self, eta: f64) -> Result<(f64, f64)> {
        let (mean, cov) = self.power_posterior(eta)?;
        let q = 1.0 / (self.t0 * self.t0) + self.prec_y();
        let beta = self.prec_y() / q;
        let m = beta * (self.y_bar - mean[0]);
        let v = 1.0 / q + beta * beta * cov[(0, 0)];
        Ok((m, v))
    }

    /// Unnormalized log power density at (psi, theta).
    pub fn logpdf_pow(&self, psi: f64, theta: f64, eta: f64) -> f64 {
        ln_normal(self.z_bar, psi, 1.0 / self.prec_z())
            + eta * ln_normal(self.y_bar, psi + theta, 1.0 / self.prec_y())
            + ln_normal(psi, 0.0, self.s0 * self.s0)
            + ln_normal(theta, 0.0, self.t0 * self.t0)
    }

    /// log normalizing constant of [`ToyModel::logpdf_pow`] at eta.
    pub fn log_evidence_pow(&self, eta: f64) -> Result<f64> {
        self.validate()?;
        let pz = self.prec_z();
        let py = eta * self.prec_y();
        let mut lambda = DMatrix::zeros(2, 2);
        lambda[(0, 0)] = 1.0 / (self.s0 * self.s0) + pz + py;
        lambda[(0, 1)] = py;
        lambda[(1, 0)] = py;
        lambda[(1, 1)] = 1.0 / (self.t0 * self.t0) + py;
        let h = DVector::from_column_slice(&[pz * self.z_bar + py * self.y_bar, py * self.y_bar]);
        let det = lambda[(0, 0)] * lambda[(1, 1)] - lambda[(0, 1)] * lambda[(1, 0)];
        if det <= 0.0 {
            return Err(Error::numerical("singular toy precision"));
        }
        let cov = lambda.try_inverse().unwrap();
        let quad = (h.transpose() * &cov * &h)[(0, 0)];
        // constants of the four Gaussian factors
        let c = -0.5 * self.z_bar * self.z_bar * pz
            - 0.5 * (2.0 * std::f64::consts::PI / pz).ln()
            + eta * (-0.5 * self.y_bar * self.y_bar * self.prec_y()
                - 0.5 * (2.0 * std::f64::consts::PI / self.prec_y()).ln())
            - 0.5 * (2.0 * std::f64::consts::PI * self.s0 * self.s0).ln()
            - 0.5 * (2.0 * std::f64::consts::PI * self.t0 * self.t0).ln();
        Ok(c + 0.5 * quad + (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln())
    }
}

impl SmiModel for ToyModel {
    type Noise = ();

    fn psi_dim(&self) -> usize {
        1
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn make_noise(&self, _key: StreamKey) -> () {}

    fn build_pow(
        &self,
        t: &mut Tape,
        psi: NodeRange,
        theta: NodeRange,
        eta: f64,
        _noise: &(),
    ) -> Result<Node> {
        let p = psi.at(0);
        let th = theta.at(0);
        let mut terms = Vec::with_capacity(4);
        // z-module likelihood
        let vz = 1.0 / self.prec_z();
        let dz = t.add_c(p, -self.z_bar);
        let qz = t.mul(dz, dz);
        let lz = t.mul_c(qz, -0.5 / vz);
        terms.push(t.add_c(lz, -0.5 * (2.0 * std::f64::consts::PI * vz).ln()));
        // powered y-module likelihood
        let vy = 1.0 / self.prec_y();
        let s = t.add(p, th);
        let dy = t.add_c(s, -self.y_bar);
        let qy = t.mul(dy, dy);
        let ly = t.mul_c(qy, -0.5 / vy);
        let ly = t.add_c(ly, -0.5 * (2.0 * std::f64::consts::PI * vy).ln());
        terms.push(t.mul_c(ly, eta));
        // priors
        let qp = t.mul(p, p);
        let lp = t.mul_c(qp, -0.5 / (self.s0 * self.s0));
        terms.push(t.add_c(lp, -0.5 * (2.0 * std::f64::consts::PI * self.s0 * self.s0).ln()));
        let qt = t.mul(th, th);
        let lt = t.mul_c(qt, -0.5 / (self.t0 * self.t0));
        terms.push(t.add_c(lt, -0.5 * (2.0 * std::f64::consts::PI * self.t0 * self.t0).ln()));
        Ok(t.sum_nodes(&terms))
    }

    fn build_float_term(
        &self,
        t: &mut Tape,
        psi: PsiSource<'_>,
        theta: NodeRange,
        _noise: &(),
    ) -> Result<Node> {
        let p = match psi {
            PsiSource::Nodes(r) => r.at(0),
            PsiSource::Values(v) => t.constant(v[0]),
        };
        let th = theta.at(0);
        let vy = 1.0 / self.prec_y();
        let s = t.add(p, th);
        let dy = t.add_c(s, -self.y_bar);
        let qy = t.mul(dy, dy);
        let ly = t.mul_c(qy, -0.5 / vy);
        let ly = t.add_c(ly, -0.5 * (2.0 * std::f64::consts::PI * vy).ln());
        let qt = t.mul(th, th);
        let lt = t.mul_c(qt, -0.5 / (self.t0 * self.t0));
        let lt = t.add_c(lt, -0.5 * (2.0 * std::f64::consts::PI * self.t0 * self.t0).ln());
        Ok(t.add(ly, lt))
    }

    fn logp_psi_value(&self, psi_unc: &[f64]) -> f64 {
        ln_normal(psi_unc[0], 0.0, self.s0 * self.s0)
    }

    fn psi_feature_dim(&self) -> usize {
        1
    }

    fn psi_features(&self, psi_unc: &[f64]) -> Vec<f64> {
        vec![psi_unc[0]]
    }

    fn build_psi_features(&self, _t: &mut Tape, psi: NodeRange) -> Vec<Node> {
        vec![psi.at(0)]
    }

    fn psi_terminals(&self) -> Vec<Terminal> {
        vec![Terminal::Identity]
    }

    fn theta_terminals(&self) -> Vec<Terminal> {
        vec![Terminal::Identity]
    }
}
