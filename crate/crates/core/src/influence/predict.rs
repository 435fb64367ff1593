//! Location prediction for a new profile by Bayesian multiple imputation
//! over fitted global-parameter draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::joint::FieldModel;
use crate::mcmc::nuts::{nuts_run, NutsConfig};
use crate::model::profiles::{FloatProfile, ProfileSet};
use crate::smi::{FloatTarget, SmiModel, Terminal};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Cap on the number of psi draws used (evenly thinned).
    pub max_psi_draws: usize,
    /// Sub-chain length per psi draw.
    pub t2: usize,
    /// Warmup steps of the step-size pre-tuning run.
    pub pretune: usize,
    pub max_depth: usize,
    pub target_accept: f64,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            max_psi_draws: 128,
            t2: 60,
            pretune: 40,
            max_depth: 10,
            target_accept: 0.8,
            seed: 0,
        }
    }
}

/// Pooled location draws for the new profile.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub draws: Vec<(f64, f64)>,
    /// Set when the indicator vector is all zero (prior-dominated
    /// posterior).
    pub all_zero_warning: bool,
}

/// Run one stage-2 sub-chain per psi draw for a single new profile and
/// pool the final states.
pub fn predict_new_profile(
    base: &FieldModel,
    y_new: &[u8],
    psi_draws: &[Vec<f64>],
    config: &PredictConfig,
) -> Result<Prediction> {
    if y_new.len() != base.catalog.d_phi() {
        return Err(Error::dims("indicator vector must have length d_phi"));
    }
    if psi_draws.is_empty() {
        return Err(Error::invalid("need at least one psi draw"));
    }
    let all_zero = y_new.iter().all(|&v| v == 0);

    // single-float model sharing the anchors and priors
    let data = ProfileSet {
        region: base.data.region,
        anchors: base.data.anchors.clone(),
        floats: vec![FloatProfile {
            id: "new-profile".into(),
            indicators: y_new.to_vec(),
        }],
    };
    let model = FieldModel::new(
        base.catalog.clone(),
        data,
        base.prior.clone(),
        base.s_mc,
        base.noise_seed,
    )?;

    // evenly thin the psi draws
    let keep = config.max_psi_draws.max(1).min(psi_draws.len());
    let stride = psi_draws.len() as f64 / keep as f64;
    let selected: Vec<&Vec<f64>> = (0..keep)
        .map(|i| &psi_draws[(i as f64 * stride) as usize])
        .collect();
    for p in &selected {
        if p.len() != model.psi_dim() {
            return Err(Error::dims("psi draw dimension mismatch"));
        }
    }

    // freeze a step size on the first draw
    let pretune_cfg = NutsConfig {
        warmup: config.pretune,
        draws: 1,
        max_depth: config.max_depth,
        target_accept: config.target_accept,
        init_step_size: None,
        seed: config.seed.wrapping_add(101),
    };
    let mut pre_target = FloatTarget::new(&model, selected[0].clone(), config.seed, u64::MAX / 4);
    let pre = nuts_run(&mut pre_target, &pretune_cfg, &[0.0, 0.0])?;
    let eps = pre.step_size;

    let sub_cfg = NutsConfig {
        warmup: 0,
        draws: config.t2,
        max_depth: config.max_depth,
        target_accept: config.target_accept,
        init_step_size: Some(eps),
        seed: 0,
    };
    let finals: Result<Vec<(f64, f64)>> = selected
        .par_iter()
        .enumerate()
        .map(|(t, psi)| {
            let mut target =
                FloatTarget::new(&model, (*psi).clone(), config.seed, 7 + t as u64);
            let cfg = NutsConfig {
                seed: config.seed ^ (t as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
                ..sub_cfg.clone()
            };
            let chain = nuts_run(&mut target, &cfg, &[0.0, 0.0])?;
            let last = chain.draws.last().expect("t2 >= 1");
            let terms = model.theta_terminals();
            Ok((terms[0].apply(last[0]), terms[1].apply(last[1])))
        })
        .collect();
    Ok(Prediction {
        draws: finals?,
        all_zero_warning: all_zero,
    })
}

/// Convenience: terminal maps of a two-coordinate location block.
pub fn location_terminals(model: &FieldModel) -> Vec<Terminal> {
    model.theta_terminals()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::loss_v;
    use crate::model::params::unconstrain;
    use crate::model::prior::PriorConfig;
    use crate::synth::generate::{generate, SynthConfig};

    fn informative_instance() -> (FieldModel, crate::synth::generate::SynthTruth) {
        let cfg = SynthConfig {
            n_anchors: 30,
            n_floats: 0,
            seed: 21,
            ..SynthConfig::default()
        };
        let (catalog, data, truth) = generate(&cfg).unwrap();
        let prior = PriorConfig {
            n_basis: cfg.n_basis,
            inducing_grid: cfg.inducing_grid,
            kernel: cfg.kernel.clone(),
            ..PriorConfig::default()
        };
        let model = FieldModel::new(catalog, data, prior, 10, 21).unwrap();
        (model, truth)
    }

    fn truth_psi_unc(model: &FieldModel, truth: &crate::synth::generate::SynthTruth) -> Vec<f64> {
        let mut theta =
            unconstrain(&truth.params, &[], &model.data.region, &{
                let mut l = model.layout.clone();
                l.locations = l.inducing.end..l.inducing.end;
                l.n_floats = 0;
                l
            })
            .unwrap();
        theta.truncate(model.psi_dim());
        theta
    }

    #[test]
    fn known_profile_concentrates_near_its_anchor() {
        let (model, truth) = informative_instance();
        // most informative anchor: the one with the most positive marks
        let (best, _) = model
            .data
            .anchors
            .iter()
            .enumerate()
            .max_by_key(|(_, a)| a.indicators.iter().map(|&v| v as usize).sum::<usize>())
            .unwrap();
        let anchor = model.data.anchors[best].clone();
        let psi = truth_psi_unc(&model, &truth);
        let cfg = PredictConfig {
            max_psi_draws: 48,
            t2: 40,
            seed: 5,
            ..PredictConfig::default()
        };
        let pred = predict_new_profile(&model, &anchor.indicators, &[psi], &cfg).unwrap();
        assert!(!pred.all_zero_warning);
        let n = pred.draws.len() as f64;
        let mx = pred.draws.iter().map(|d| d.0).sum::<f64>() / n;
        let my = pred.draws.iter().map(|d| d.1).sum::<f64>() / n;
        let dist = ((mx - anchor.x).powi(2) + (my - anchor.y).powi(2)).sqrt();
        assert!(
            dist < 0.15,
            "prediction {:.3},{:.3} is {dist:.3} from the source anchor",
            mx,
            my
        );
    }

    #[test]
    fn all_zero_profile_is_near_uniform_with_heavy_zeroing() {
        let (model, truth) = informative_instance();
        let mut params = truth.params.clone();
        for z in params.zeta.iter_mut() {
            *z = 0.97;
        }
        for m in params.mu.iter_mut() {
            *m = 0.05;
        }
        let psi = {
            let mut l = model.layout.clone();
            l.locations = l.inducing.end..l.inducing.end;
            l.n_floats = 0;
            let mut t = unconstrain(&params, &[], &model.data.region, &l).unwrap();
            t.truncate(model.psi_dim());
            t
        };
        let y = vec![0u8; model.catalog.d_phi()];
        let cfg = PredictConfig {
            max_psi_draws: 128,
            t2: 30,
            seed: 3,
            ..PredictConfig::default()
        };
        let pred = predict_new_profile(&model, &y, &[psi], &cfg).unwrap();
        assert!(pred.all_zero_warning);
        let region = model.data.region;
        let v = loss_v(&[pred.draws.clone()], &[(region.width / 2.0, region.height / 2.0)])
            .unwrap();
        let uniform = (region.width * region.width + region.height * region.height) / 12.0;
        // 128 pooled finals: allow three rough standard errors
        let se = 0.11 / (pred.draws.len() as f64).sqrt();
        assert!(
            (v - uniform).abs() <= 3.0 * se + 0.01,
            "V {v} vs uniform {uniform}"
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let (model, truth) = informative_instance();
        let psi = truth_psi_unc(&model, &truth);
        let y = model.data.anchors[0].indicators.clone();
        let cfg = PredictConfig {
            max_psi_draws: 8,
            t2: 10,
            seed: 9,
            ..PredictConfig::default()
        };
        let a = predict_new_profile(&model, &y, &[psi.clone()], &cfg).unwrap();
        let b = predict_new_profile(&model, &y, &[psi], &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
    }
}
