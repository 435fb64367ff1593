//! Two-stage nested sampler for the semi-modular posterior at fixed
//! influence.
//!
//! Stage 1 runs NUTS on the powered joint over (psi, theta-tilde). Stage 2
//! runs, for each retained psi draw, an independent NUTS sub-chain on the
//! conditional p(theta | psi, Y), keeping only the final state. Sub-chains
//! are embarrassingly parallel and deterministic given the seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};
use crate::smi::{FloatTarget, PowTarget, SmiModel};

use super::nuts::{nuts_run, NutsChain, NutsConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SmiConfig {
    pub stage1: NutsConfig,
    /// Stage-2 sub-chain length.
    pub t2: usize,
    /// Stage-2 restarts from overdispersed inits (1 = plain warm start).
    pub k_restarts: usize,
    /// Number of independent stage-1 chains.
    pub n_chains: usize,
    /// Warmup steps of the stage-2 pre-tuning run that freezes the
    /// sub-chain step size.
    pub t2_pretune: usize,
}

impl Default for SmiConfig {
    fn default() -> Self {
        SmiConfig {
            stage1: NutsConfig::default(),
            t2: 50,
            k_restarts: 1,
            n_chains: 4,
            t2_pretune: 40,
        }
    }
}

/// Output of one stage-1 chain plus its stage-2 sub-chains: per-iteration
/// triples (psi, theta-tilde, theta) on unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct SmiChain {
    pub eta: f64,
    pub psi: Vec<Vec<f64>>,
    pub theta_tilde: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub stage1_logp: Vec<f64>,
    /// Stage-2 sub-chain divergence flag per retained draw.
    pub stage2_flags: Vec<bool>,
    pub stage1_divergences: usize,
    pub stage1_step_size: f64,
    pub stage2_step_size: f64,
    pub divergence_warning: bool,
}

fn default_init(dim: usize, seed: u64, chain: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = StreamKey::new(seed, Domain::Init, chain).rng();
    (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

/// Draw from the semi-modular posterior at influence `eta` via nested
/// MCMC. Returns one [`SmiChain`] per stage-1 chain.
pub fn smi_sample<M: SmiModel>(model: &M, eta: f64, config: &SmiConfig, seed: u64) -> Result<Vec<SmiChain>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("eta must lie in [0, 1]"));
    }
    if config.n_chains == 0 || config.t2 == 0 || config.k_restarts == 0 {
        return Err(Error::invalid("chain counts must be positive"));
    }
    let results: Result<Vec<SmiChain>> = (0..config.n_chains)
        .into_par_iter()
        .map(|chain| smi_sample_chain(model, eta, config, seed, chain as u64))
        .collect();
    results
}

fn smi_sample_chain<M: SmiModel>(
    model: &M,
    eta: f64,
    config: &SmiConfig,
    seed: u64,
    chain: u64,
) -> Result<SmiChain> {
    let psi_dim = model.psi_dim();
    let theta_dim = model.theta_dim();
    // distinct noise and sampler streams per chain
    let noise_seed = seed ^ (chain.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1);
    let mut target = PowTarget::new(model, eta, noise_seed, 0);
    let stage1_cfg = NutsConfig {
        seed: seed.wrapping_add(chain),
        ..config.stage1.clone()
    };
    let init = default_init(psi_dim + theta_dim, seed, chain);
    let stage1: NutsChain = nuts_run(&mut target, &stage1_cfg, &init)?;

    let t1 = stage1.draws.len();
    let mut psi = Vec::with_capacity(t1);
    let mut theta_tilde = Vec::with_capacity(t1);
    for d in &stage1.draws {
        psi.push(d[..psi_dim].to_vec());
        theta_tilde.push(d[psi_dim..].to_vec());
    }

    if theta_dim == 0 {
        return Ok(SmiChain {
            eta,
            psi,
            theta_tilde,
            theta: Vec::new(),
            stage1_logp: stage1.logps,
            stage2_flags: vec![false; t1],
            stage1_divergences: stage1.divergences,
            stage1_step_size: stage1.step_size,
            stage2_step_size: 0.0,
            divergence_warning: stage1.divergence_warning,
        });
    }

    // pre-tune the stage-2 step size on the first retained psi
    let pretune_cfg = NutsConfig {
        warmup: config.t2_pretune,
        draws: 1,
        max_depth: config.stage1.max_depth,
        target_accept: config.stage1.target_accept,
        init_step_size: None,
        seed: seed.wrapping_add(7777).wrapping_add(chain),
    };
    let mut pretune_target = FloatTarget::new(model, psi[0].clone(), noise_seed, u64::MAX / 2);
    let pretune = nuts_run(&mut pretune_target, &pretune_cfg, &theta_tilde[0])?;
    let stage2_eps = pretune.step_size;

    // independent sub-chains, one per stage-1 draw
    let stage2_cfg = NutsConfig {
        warmup: 0,
        draws: config.t2,
        max_depth: config.stage1.max_depth,
        target_accept: config.stage1.target_accept,
        init_step_size: Some(stage2_eps),
        seed: 0, // overwritten per sub-chain
    };
    let sub: Result<Vec<(Vec<f64>, bool)>> = (0..t1)
        .into_par_iter()
        .map(|t| {
            let offset = (chain as u64) << 32 | t as u64;
            // K restarts: first warm-started at theta-tilde, the rest
            // overdispersed; the kept one is chosen uniformly
            let mut finals = Vec::with_capacity(config.k_restarts);
            for k in 0..config.k_restarts {
                let mut target =
                    FloatTarget::new(model, psi[t].clone(), noise_seed, offset * 131 + k as u64);
                let init = if k == 0 {
                    theta_tilde[t].clone()
                } else {
                    use rand::Rng;
                    let mut rng =
                        StreamKey::new(seed, Domain::Stage2, offset * 131 + k as u64).rng();
                    (0..model.theta_dim()).map(|_| rng.gen_range(-2.5..2.5)).collect()
                };
                let cfg = NutsConfig {
                    seed: seed ^ (offset * 131 + k as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
                    ..stage2_cfg.clone()
                };
                let chain_k = nuts_run(&mut target, &cfg, &init)?;
                let diverged = chain_k.divergences > 0;
                let last = chain_k.draws.last().expect("t2 >= 1").clone();
                finals.push((last, diverged));
            }
            let best = if config.k_restarts == 1 {
                finals.pop()
            } else {
                use rand::Rng;
                let mut rng = StreamKey::new(seed, Domain::Stage2, offset * 131 + 97).rng();
                let pick = rng.gen_range(0..finals.len());
                Some(finals.swap_remove(pick))
            };
            Ok(best.expect("k_restarts >= 1"))
        })
        .collect();
    let sub = sub?;
    let (theta, stage2_flags): (Vec<Vec<f64>>, Vec<bool>) = sub.into_iter().unzip();

    Ok(SmiChain {
        eta,
        psi,
        theta_tilde,
        theta,
        stage1_logp: stage1.logps,
        stage2_flags,
        stage1_divergences: stage1.divergences,
        stage1_step_size: stage1.step_size,
        stage2_step_size: stage2_eps,
        divergence_warning: stage1.divergence_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::diagnostics::ess;
    use crate::synth::toy::ToyModel;

    fn toy_cfg(warmup: usize, draws: usize) -> SmiConfig {
        SmiConfig {
            stage1: NutsConfig {
                warmup,
                draws,
                ..NutsConfig::default()
            },
            t2: 40,
            k_restarts: 1,
            n_chains: 2,
            t2_pretune: 30,
        }
    }

    fn pooled<'a>(chains: &'a [SmiChain], f: impl Fn(&SmiChain) -> &Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        chains
            .iter()
            .map(|c| f(c).iter().map(|d| d[0]).collect())
            .collect()
    }

    fn check_moments(label: &str, per_chain: &[Vec<f64>], expect_mean: f64, expect_var: f64) {
        let all: Vec<f64> = per_chain.iter().flatten().cloned().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let e = ess(per_chain);
        let se_mean = (var / e).sqrt();
        assert!(
            (mean - expect_mean).abs() <= 3.0 * se_mean,
            "{label}: mean {mean} vs {expect_mean} (se {se_mean}, ess {e})"
        );
        let se_var = (2.0 * var * var / e).sqrt();
        assert!(
            (var - expect_var).abs() <= 3.0 * se_var,
            "{label}: var {var} vs {expect_var} (se {se_var})"
        );
    }

    #[test]
    fn toy_conjugate_moments_across_influence() {
        let model = ToyModel::default();
        for &eta in &[0.0, 0.5, 1.0] {
            let chains = smi_sample(&model, eta, &toy_cfg(400, 1500), 11).unwrap();
            let (mean, cov) = model.power_posterior(eta).unwrap();
            check_moments(
                &format!("psi at eta {eta}"),
                &pooled(&chains, |c| &c.psi),
                mean[0],
                cov[(0, 0)],
            );
            check_moments(
                &format!("theta-tilde at eta {eta}"),
                &pooled(&chains, |c| &c.theta_tilde),
                mean[1],
                cov[(1, 1)],
            );
            // stage-2 conditional marginal
            let (tm, tv) = model.smi_marginal_theta(eta).unwrap();
            check_moments(
                &format!("theta at eta {eta}"),
                &pooled(&chains, |c| &c.theta),
                tm,
                tv,
            );
        }
    }

    #[test]
    fn bayes_endpoint_matches_direct_joint_sampling() {
        // at eta = 1 with long sub-chains, the (psi, theta) marginal of
        // the nested sampler agrees with direct NUTS on the Bayes joint
        let model = ToyModel::default();
        let chains = smi_sample(&model, 1.0, &toy_cfg(400, 1500), 5).unwrap();
        let (mean, cov) = model.power_posterior(1.0).unwrap();
        check_moments(
            "direct-vs-nested psi",
            &pooled(&chains, |c| &c.psi),
            mean[0],
            cov[(0, 0)],
        );
        // theta at eta = 1 has the same marginal as theta-tilde
        check_moments(
            "direct-vs-nested theta",
            &pooled(&chains, |c| &c.theta),
            mean[1],
            cov[(1, 1)],
        );
    }

    #[test]
    fn deterministic_and_cut_invariant() {
        let model = ToyModel::default();
        let cfg = toy_cfg(100, 200);
        let a = smi_sample(&model, 0.0, &cfg, 3).unwrap();
        let b = smi_sample(&model, 0.0, &cfg, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.psi, y.psi);
            assert_eq!(x.theta, y.theta);
        }
        // cut property: y-module data has no effect on stage-1 psi draws
        let perturbed = ToyModel {
            y_bar: -4.5,
            ..ToyModel::default()
        };
        let c = smi_sample(&perturbed, 0.0, &cfg, 3).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.psi, y.psi, "stage-1 psi must ignore Y at eta = 0");
            assert_ne!(x.theta, y.theta, "stage-2 theta must see Y");
        }
    }

    #[test]
    fn stage2_streams_are_distinct() {
        // sub-chains for distinct draws use distinct noise streams: with a
        // constant psi sequence the finals must still differ
        let model = ToyModel::default();
        let cfg = SmiConfig {
            stage1: NutsConfig {
                warmup: 50,
                draws: 30,
                ..NutsConfig::default()
            },
            ..toy_cfg(50, 30)
        };
        let chains = smi_sample(&model, 0.5, &cfg, 9).unwrap();
        let thetas = &chains[0].theta;
        let distinct = thetas
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count();
        assert!(distinct > thetas.len() / 2);
    }
}
