//! The variational meta-posterior: three conditional flows trained
//! end-to-end with the stop-gradient two-term utility, ascending the
//! influence-averaged objective by stochastic gradient.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Node, NodeRange, Tape};
use crate::rng::{Domain, StreamKey};
use crate::smi::{PsiSource, SmiModel};

use super::flow::{
    build_flow_forward, flow_forward_f64, std_normal_logpdf, FlowArch, FlowConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VmpConfig {
    /// Flow over psi (context: eta).
    pub flow_psi: FlowConfig,
    /// Flow over locations (context: psi features ++ eta), used for both
    /// the analysis-stage and imputation-stage factors.
    pub flow_loc: FlowConfig,
}

impl Default for VmpConfig {
    fn default() -> Self {
        VmpConfig {
            flow_psi: FlowConfig::default(),
            flow_loc: FlowConfig::default(),
        }
    }
}

/// Auxiliary distribution over the influence parameter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RhoConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RhoConfig {
    fn default() -> Self {
        RhoConfig {
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub steps: usize,
    /// ELBO samples per step.
    pub n_mc: usize,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of the peak.
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    /// Per-block update mask (lambda1, lambda2, lambda3).
    pub mask: [bool; 3],
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            steps: 20_000,
            n_mc: 16,
            lr_peak: 2e-3,
            warmup_steps: 200,
            lr_floor: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1e4,
            mask: [true, true, true],
        }
    }
}

/// The trained variational meta-posterior.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vmp {
    pub arch1: FlowArch,
    pub arch2: FlowArch,
    pub arch3: FlowArch,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
}

impl Vmp {
    pub fn new<M: SmiModel>(model: &M, config: &VmpConfig, seed: u64) -> Result<Self> {
        let psi_dim = model.psi_dim();
        let theta_dim = model.theta_dim();
        let feat = model.psi_feature_dim();
        let arch1 = FlowArch::new(psi_dim, 1, &config.flow_psi)?;
        let arch2 = FlowArch::new(theta_dim.max(1), feat + 1, &config.flow_loc)?;
        let arch3 = FlowArch::new(theta_dim.max(1), feat + 1, &config.flow_loc)?;
        Ok(Vmp {
            lambda1: arch1.init_params(StreamKey::new(seed, Domain::Init, 1)),
            lambda2: arch2.init_params(StreamKey::new(seed, Domain::Init, 2)),
            lambda3: arch3.init_params(StreamKey::new(seed, Domain::Init, 3)),
            arch1,
            arch2,
            arch3,
        })
    }

    pub fn param_count(&self) -> usize {
        self.lambda1.len() + self.lambda2.len() + self.lambda3.len()
    }
}

/// Frozen randomness for one utility evaluation: the influence draw, base
/// draws for the three flows and the field-integration noise.
pub struct NoiseBundle<N> {
    pub eta: f64,
    pub z1: Vec<Vec<f64>>,
    pub z2: Vec<Vec<f64>>,
    pub z3: Vec<Vec<f64>>,
    pub field: N,
}

pub fn make_bundle<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    n_mc: usize,
    eta: f64,
    seed: u64,
    step: u64,
) -> NoiseBundle<M::Noise> {
    let mut rng = StreamKey::new(seed, Domain::Train, step).rng();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, d: usize, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    };
    let z1 = draw(&mut rng, vmp.arch1.dim, n_mc);
    let z2 = draw(&mut rng, vmp.arch2.dim, n_mc);
    let z3 = draw(&mut rng, vmp.arch3.dim, n_mc);
    let field = model.make_noise(StreamKey::new(seed, Domain::FieldNoise, step));
    NoiseBundle {
        eta,
        z1,
        z2,
        z3,
        field,
    }
}

/// Utility value and gradients with respect to (lambda1, lambda2,
/// lambda3), built on one tape. The stop-gradient contract is structural:
/// the Bayes-stage term consumes psi and its features as detached
/// constants, so lambda1 receives gradient only from the powered-stage
/// ELBO and lambda2 only from the Bayes-stage ELBO.
pub fn utility_and_grads<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    bundle: &NoiseBundle<M::Noise>,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n_mc = bundle.z1.len();
    let mut t = Tape::new();
    let l1 = t.inputs(&vmp.lambda1);
    let l2 = t.inputs(&vmp.lambda2);
    let l3 = t.inputs(&vmp.lambda3);
    let eta_node = t.constant(bundle.eta);
    let theta_dim = model.theta_dim();

    let mut sample_terms: Vec<Node> = Vec::with_capacity(n_mc);
    for i in 0..n_mc {
        // ----- powered-stage term, differentiable in (lambda1, lambda3)
        let (psi_block, logdet1) = build_flow_forward(&mut t, &vmp.arch1, l1, &bundle.z1[i], &[eta_node]);
        let logq1_const = std_normal_logpdf(&bundle.z1[i]);
        let mut features = model.build_psi_features(&mut t, psi_block);
        features.push(eta_node);
        let (theta_tilde_block, logdet3) =
            build_flow_forward(&mut t, &vmp.arch3, l3, &bundle.z3[i], &features);
        let theta_tilde = NodeRange {
            start: theta_tilde_block.start,
            len: theta_dim as u32,
        };
        let logp_pow = model.build_pow(&mut t, psi_block, theta_tilde, bundle.eta, &bundle.field)?;
        // ELBO_pow sample = log p_pow - log q1 - log q3
        //                 = log p_pow - (logN(z1) - logdet1) - (logN(z3) - logdet3)
        let mut pow = t.add(logp_pow, logdet1);
        pow = t.add(pow, logdet3);
        let pow = t.add_c(pow, -logq1_const - std_normal_logpdf(&bundle.z3[i]));

        // ----- Bayes-stage term with psi detached
        let psi_vals = t.vals(psi_block).to_vec();
        let logq1_value = logq1_const - t.val(logdet1);
        let mut feat_vals = model.psi_features(&psi_vals);
        feat_vals.push(bundle.eta);
        let feat_consts: Vec<Node> = feat_vals.iter().map(|&v| t.constant(v)).collect();
        let (theta_block, logdet2) =
            build_flow_forward(&mut t, &vmp.arch2, l2, &bundle.z2[i], &feat_consts);
        let theta = NodeRange {
            start: theta_block.start,
            len: theta_dim as u32,
        };
        let float_term =
            model.build_float_term(&mut t, PsiSource::Values(&psi_vals), theta, &bundle.field)?;
        // ELBO_bayes sample = [log p(Y|psi,theta) + log p(theta) + log p(psi)]
        //                     - log q1(psi) - log q2(theta|psi)
        let bayes = t.add(float_term, logdet2);
        let bayes = t.add_c(
            bayes,
            model.logp_psi_value(&psi_vals) - logq1_value - std_normal_logpdf(&bundle.z2[i]),
        );

        sample_terms.push(t.add(pow, bayes));
    }
    let total = t.sum_nodes(&sample_terms);
    let utility = t.mul_c(total, 1.0 / n_mc as f64);
    let value = t.val(utility);
    if !value.is_finite() {
        return Ok((value, Vec::new(), Vec::new(), Vec::new()));
    }
    t.backward(utility);
    Ok((
        value,
        t.grads(l1).to_vec(),
        t.grads(l2).to_vec(),
        t.grads(l3).to_vec(),
    ))
}

/// Value of log p_pow at detached coordinates.
fn pow_value<M: SmiModel>(
    model: &M,
    psi: &[f64],
    theta: &[f64],
    eta: f64,
    noise: &M::Noise,
) -> Result<f64> {
    let mut t = Tape::new();
    let psi_r = t.constants(psi);
    let theta_r = t.constants(theta);
    let node = model.build_pow(&mut t, psi_r, theta_r, eta, noise)?;
    Ok(t.val(node))
}

fn float_term_value<M: SmiModel>(
    model: &M,
    psi: &[f64],
    theta: &[f64],
    noise: &M::Noise,
) -> Result<f64> {
    let mut t = Tape::new();
    let theta_r = t.constants(theta);
    let node = model.build_float_term(&mut t, PsiSource::Values(psi), theta_r, noise)?;
    Ok(t.val(node))
}

/// Monte-Carlo estimate of the powered-stage ELBO at a frozen bundle,
/// evaluated in plain f64 (deterministic in the bundle).
pub fn elbo_pow_value<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    lambda1: &[f64],
    lambda3: &[f64],
    bundle: &NoiseBundle<M::Noise>,
) -> Result<f64> {
    let mut acc = 0.0;
    let theta_dim = model.theta_dim();
    for i in 0..bundle.z1.len() {
        let (psi, logdet1) = flow_forward_f64(&vmp.arch1, lambda1, &bundle.z1[i], &[bundle.eta]);
        let mut feats = model.psi_features(&psi);
        feats.push(bundle.eta);
        let (theta_tilde, logdet3) = flow_forward_f64(&vmp.arch3, lambda3, &bundle.z3[i], &feats);
        let logp = pow_value(model, &psi, &theta_tilde[..theta_dim], bundle.eta, &bundle.field)?;
        if !logp.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let logq1 = std_normal_logpdf(&bundle.z1[i]) - logdet1;
        let logq3 = std_normal_logpdf(&bundle.z3[i]) - logdet3;
        acc += logp - logq1 - logq3;
    }
    Ok(acc / bundle.z1.len() as f64)
}

/// Monte-Carlo estimate of the Bayes-stage ELBO at a frozen bundle
/// (values only; the training gradient of this term flows to lambda2
/// alone).
pub fn elbo_bayes_value<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    lambda1: &[f64],
    lambda2: &[f64],
    bundle: &NoiseBundle<M::Noise>,
) -> Result<f64> {
    let mut acc = 0.0;
    let theta_dim = model.theta_dim();
    for i in 0..bundle.z1.len() {
        let (psi, logdet1) = flow_forward_f64(&vmp.arch1, lambda1, &bundle.z1[i], &[bundle.eta]);
        let mut feats = model.psi_features(&psi);
        feats.push(bundle.eta);
        let (theta, logdet2) = flow_forward_f64(&vmp.arch2, lambda2, &bundle.z2[i], &feats);
        let ft = float_term_value(model, &psi, &theta[..theta_dim], &bundle.field)?;
        if !ft.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let logq1 = std_normal_logpdf(&bundle.z1[i]) - logdet1;
        let logq2 = std_normal_logpdf(&bundle.z2[i]) - logdet2;
        acc += ft + model.logp_psi_value(&psi) - logq1 - logq2;
    }
    Ok(acc / bundle.z1.len() as f64)
}

/// Public ELBO_pow estimator drawing a fresh bundle from `key`.
pub fn elbo_pow<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    eta: f64,
    n_mc: usize,
    seed: u64,
    step: u64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("eta must lie in [0, 1]"));
    }
    let bundle = make_bundle(model, vmp, n_mc, eta, seed, step);
    elbo_pow_value(model, vmp, &vmp.lambda1, &vmp.lambda3, &bundle)
}

/// Public stop-gradient Bayes ELBO estimator (value form).
pub fn elbo_bayes_stopgrad<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    n_mc: usize,
    seed: u64,
    step: u64,
) -> Result<f64> {
    let bundle = make_bundle(model, vmp, n_mc, 1.0, seed, step);
    elbo_bayes_value(model, vmp, &vmp.lambda1, &vmp.lambda2, &bundle)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &SgdConfig) {
        self.t += 1;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            // ascent: follow the gradient uphill
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] += lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

fn schedule(step: usize, cfg: &SgdConfig) -> f64 {
    let s = step as f64;
    if step < cfg.warmup_steps {
        cfg.lr_peak * (s + 1.0) / cfg.warmup_steps as f64
    } else {
        let total = (cfg.steps - cfg.warmup_steps).max(1) as f64;
        let frac = (s - cfg.warmup_steps as f64) / total;
        cfg.lr_peak * (1.0 - (1.0 - cfg.lr_floor) * frac)
    }
}

/// Training outcome: fitted parameters plus the utility trace.
pub struct TrainedVmp {
    pub vmp: Vmp,
    pub trace: Vec<f64>,
    pub skipped_steps: usize,
}

/// Ascend the influence-averaged two-term utility by Adam with a linear
/// warmup-then-decay schedule. Steps with a non-finite utility are
/// skipped; more than 10% skipped aborts with diagnostics.
pub fn train_vmp<M: SmiModel>(
    model: &M,
    config: &VmpConfig,
    rho: &RhoConfig,
    sgd: &SgdConfig,
    seed: u64,
) -> Result<TrainedVmp> {
    if sgd.steps == 0 || sgd.n_mc == 0 {
        return Err(Error::invalid("training needs positive steps and n_mc"));
    }
    let beta = Beta::new(rho.alpha, rho.beta)
        .map_err(|e| Error::invalid(format!("rho parameters: {e}")))?;
    let mut vmp = Vmp::new(model, config, seed)?;
    let mut adam1 = Adam::new(vmp.lambda1.len());
    let mut adam2 = Adam::new(vmp.lambda2.len());
    let mut adam3 = Adam::new(vmp.lambda3.len());
    let mut trace = Vec::with_capacity(sgd.steps);
    let mut skipped = 0usize;
    let mut eta_rng = StreamKey::new(seed, Domain::Train, u64::MAX).rng();

    for step in 0..sgd.steps {
        let eta: f64 = beta.sample(&mut eta_rng).clamp(1e-6, 1.0 - 1e-6);
        let bundle = make_bundle(model, &vmp, sgd.n_mc, eta, seed, step as u64);
        let (value, mut g1, mut g2, mut g3) = utility_and_grads(model, &vmp, &bundle)?;
        let grads_finite = value.is_finite()
            && g1.iter().chain(g2.iter()).chain(g3.iter()).all(|g| g.is_finite());
        if !grads_finite {
            skipped += 1;
            trace.push(f64::NAN);
            if skipped * 10 > sgd.steps.max(10) {
                return Err(Error::numerical(format!(
                    "more than 10% of training steps skipped ({skipped} of {} so far)",
                    step + 1
                )));
            }
            continue;
        }
        let norm = g1
            .iter()
            .chain(g2.iter())
            .chain(g3.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > sgd.grad_clip {
            let scale = sgd.grad_clip / norm;
            for g in g1.iter_mut().chain(g2.iter_mut()).chain(g3.iter_mut()) {
                *g *= scale;
            }
        }
        let lr = schedule(step, sgd);
        if sgd.mask[0] {
            adam1.step(&mut vmp.lambda1, &g1, lr, sgd);
        }
        if sgd.mask[1] {
            adam2.step(&mut vmp.lambda2, &g2, lr, sgd);
        }
        if sgd.mask[2] {
            adam3.step(&mut vmp.lambda3, &g3, lr, sgd);
        }
        trace.push(value);
    }
    Ok(TrainedVmp {
        vmp,
        trace,
        skipped_steps: skipped,
    })
}

/// Joint draws from the trained family at a given influence.
pub struct VmpDraws {
    /// Unconstrained psi draws.
    pub psi_unc: Vec<Vec<f64>>,
    /// Analysis-stage locations in the model domain.
    pub theta: Vec<Vec<f64>>,
    /// Imputation-stage auxiliary locations in the model domain.
    pub theta_tilde: Vec<Vec<f64>>,
}

impl VmpDraws {
    /// Locations of float `m` across draws (theta laid out (x, y) pairs).
    pub fn float_locations(&self, m: usize) -> Vec<(f64, f64)> {
        self.theta
            .iter()
            .map(|d| (d[2 * m], d[2 * m + 1]))
            .collect()
    }
}

/// Sample n joint draws (psi, theta, theta-tilde) from the VMP at `eta`.
pub fn vmp_posterior<M: SmiModel>(
    model: &M,
    vmp: &Vmp,
    eta: f64,
    n: usize,
    key: StreamKey,
) -> Result<VmpDraws> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("eta must lie in [0, 1]"));
    }
    let mut rng = key.rng();
    let theta_dim = model.theta_dim();
    let theta_terms = model.theta_terminals();
    let mut psi_unc = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut theta_tilde = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: Vec<f64> = (0..vmp.arch1.dim).map(|_| rng.sample(StandardNormal)).collect();
        let z2: Vec<f64> = (0..vmp.arch2.dim).map(|_| rng.sample(StandardNormal)).collect();
        let z3: Vec<f64> = (0..vmp.arch3.dim).map(|_| rng.sample(StandardNormal)).collect();
        let (psi, _) = flow_forward_f64(&vmp.arch1, &vmp.lambda1, &z1, &[eta]);
        let mut feats = model.psi_features(&psi);
        feats.push(eta);
        let (th_unc, _) = flow_forward_f64(&vmp.arch2, &vmp.lambda2, &z2, &feats);
        let (tht_unc, _) = flow_forward_f64(&vmp.arch3, &vmp.lambda3, &z3, &feats);
        let th: Vec<f64> = th_unc[..theta_dim]
            .iter()
            .zip(&theta_terms)
            .map(|(&u, term)| term.apply(u))
            .collect();
        let tht: Vec<f64> = tht_unc[..theta_dim]
            .iter()
            .zip(&theta_terms)
            .map(|(&u, term)| term.apply(u))
            .collect();
        psi_unc.push(psi);
        theta.push(th);
        theta_tilde.push(tht);
    }
    Ok(VmpDraws {
        psi_unc,
        theta,
        theta_tilde,
    })
}
