//! Prior configuration and log-prior evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::inducing::InducingGrid;
use crate::gp::kernel::KernelConfig;
use crate::grad::{Node, Tape};

use super::params::{GlobalParams, PsiNodes};

/// Prior hyper-parameters. The Gamma shape/rate come from the model
/// elicitation (3, 3); the offset and weight scales are unit-scale
/// defaults exposed here because no canonical values exist for them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Scale of the Normal prior on free offsets.
    pub sigma_a: f64,
    /// Scale of the Laplace prior on LMC weights.
    pub sigma_w: f64,
    pub kernel: KernelConfig,
    /// Number of basis fields B.
    pub n_basis: usize,
    /// Inducing lattice divisions g, giving (g+1)^2 inducing points.
    pub inducing_grid: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            gamma_shape: 3.0,
            gamma_rate: 3.0,
            sigma_a: 1.0,
            sigma_w: 1.0,
            kernel: KernelConfig::default(),
            n_basis: 3,
            inducing_grid: 10,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_shape > 0.0)
            || !(self.gamma_rate > 0.0)
            || !(self.sigma_a > 0.0)
            || !(self.sigma_w > 0.0)
            || self.n_basis == 0
            || self.inducing_grid == 0
        {
            return Err(Error::invalid("prior hyperparameters must be positive"));
        }
        self.kernel.validate()
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = COEFFS[0];
        let t = x + 7.5;
        for (i, &c) in COEFFS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// log Gamma(x; shape, rate).
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-prior of the global parameters: Gamma intensities, uniform
/// zero-inflation, Normal free offsets (the pinned first-form offsets carry
/// no prior), Laplace weights and the GP prior on inducing values.
pub fn log_prior(
    psi: &GlobalParams,
    config: &PriorConfig,
    grid: &InducingGrid,
    catalog: &super::catalog::ItemCatalog,
) -> f64 {
    let mut lp = 0.0;
    for &m in &psi.mu {
        if !(m > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp += gamma_logpdf(m, config.gamma_shape, config.gamma_rate);
    }
    for &z in &psi.zeta {
        if !(0.0..=1.0).contains(&z) {
            return f64::NEG_INFINITY;
        }
    }
    let norm_const = -0.5 * (2.0 * std::f64::consts::PI).ln() - config.sigma_a.ln();
    for item in 0..catalog.n_items() {
        for form in 1..catalog.form_count(item) {
            let a = psi.offsets[catalog.flat_index(item, form)];
            lp += norm_const - 0.5 * a * a / (config.sigma_a * config.sigma_a);
        }
    }
    let lap_const = -(2.0 * config.sigma_w).ln();
    for &w in &psi.weights {
        lp += lap_const - w.abs() / config.sigma_w;
    }
    for b in 0..psi.n_basis {
        lp += grid.log_prior(psi.inducing(b));
    }
    lp
}

/// Build the psi log-prior on the tape from constrained nodes. The zeta
/// uniform prior contributes zero inside (0, 1); the sigmoid transform
/// keeps it there.
pub fn build_log_prior(
    t: &mut Tape,
    c: &PsiNodes,
    config: &PriorConfig,
    grid: &InducingGrid,
) -> Node {
    let mut terms: Vec<Node> = Vec::new();
    // Gamma(shape, rate) on mu, written in terms of u = log mu:
    // (shape - 1) u - rate e^u + shape ln rate - lnGamma(shape)
    let gamma_const = config.gamma_shape * config.gamma_rate.ln() - ln_gamma(config.gamma_shape);
    for (i, &u) in c.log_mu.iter().enumerate() {
        let a = t.mul_c(u, config.gamma_shape - 1.0);
        let e = c.mu[i];
        let b = t.mul_c(e, -config.gamma_rate);
        let s = t.add(a, b);
        terms.push(t.add_c(s, gamma_const));
    }
    // Normal(0, sigma_a) on free offsets
    let norm_const = -0.5 * (2.0 * std::f64::consts::PI).ln() - config.sigma_a.ln();
    let inv_2va = -0.5 / (config.sigma_a * config.sigma_a);
    for off in c.offsets.iter().flatten() {
        let sq = t.mul(*off, *off);
        let s = t.mul_c(sq, inv_2va);
        terms.push(t.add_c(s, norm_const));
    }
    // Laplace(0, sigma_w) on weights
    let lap_const = -(2.0 * config.sigma_w).ln();
    let inv_sw = -1.0 / config.sigma_w;
    for w in c.weights.iter() {
        let a = t.abs(w);
        let s = t.mul_c(a, inv_sw);
        terms.push(t.add_c(s, lap_const));
    }
    // N(0, K_U) per basis field: -1/2 G' K_U^{-1} G - 1/2 log det(2 pi K_U)
    let u = grid.len();
    let inv_ku = grid.inv_k_u();
    let gauss_const =
        -0.5 * grid.log_det_k_u() - 0.5 * u as f64 * (2.0 * std::f64::consts::PI).ln();
    // pool the inverse rows once, reuse across bases
    let mut rows = Vec::with_capacity(u);
    for r in 0..u {
        let row: Vec<f64> = (0..u).map(|cidx| inv_ku[(r, cidx)]).collect();
        rows.push(t.pool(&row));
    }
    for b in 0..c.inducing.len() / u {
        let gb = Node(c.inducing.start + (b * u) as u32);
        let alpha_start = t.len() as u32;
        for row in rows.iter().take(u) {
            t.dot_pooled(*row, gb, u);
        }
        let quad = t.dot_nodes(gb, Node(alpha_start), u);
        let s = t.mul_c(quad, -0.5);
        terms.push(t.add_c(s, gauss_const));
    }
    t.sum_nodes(&terms)
}
