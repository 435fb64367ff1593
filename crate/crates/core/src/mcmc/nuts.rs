//! No-U-Turn sampler with multinomial trajectory sampling and
//! dual-averaging step-size adaptation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::DifferentiableTarget;
use crate::rng::{Domain, StreamKey};

/// Energy gap beyond which a leapfrog state counts as divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NutsConfig {
    pub warmup: usize,
    pub draws: usize,
    pub max_depth: usize,
    pub target_accept: f64,
    /// Fixed initial step size; when absent a reasonable one is searched.
    pub init_step_size: Option<f64>,
    pub seed: u64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        NutsConfig {
            warmup: 500,
            draws: 1000,
            max_depth: 10,
            target_accept: 0.8,
            init_step_size: None,
            seed: 0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.max_depth == 0 {
            return Err(Error::invalid("draw count and tree depth must be positive"));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(Error::invalid("target acceptance must lie in (0, 1)"));
        }
        if self.warmup == 0 && self.init_step_size.is_none() {
            return Err(Error::invalid(
                "a fixed step size is required when running without warmup",
            ));
        }
        Ok(())
    }
}

/// One chain of post-warmup draws.
#[derive(Debug, Clone)]
pub struct NutsChain {
    pub draws: Vec<Vec<f64>>,
    pub logps: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    /// Set when more than 25% of post-warmup transitions diverged.
    pub divergence_warning: bool,
    /// Divergence flag per post-warmup transition.
    pub divergent: Vec<bool>,
}

struct Leaf {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
}

struct Subtree {
    q_minus: Vec<f64>,
    p_minus: Vec<f64>,
    grad_minus: Vec<f64>,
    q_plus: Vec<f64>,
    p_plus: Vec<f64>,
    grad_plus: Vec<f64>,
    q_prop: Vec<f64>,
    logp_prop: f64,
    log_sum_w: f64,
    sum_alpha: f64,
    n_alpha: usize,
    diverged: bool,
    stop: bool,
}

fn hamiltonian(logp: f64, p: &[f64]) -> f64 {
    logp - 0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

fn leapfrog<T: DifferentiableTarget>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
) -> f64 {
    for i in 0..q.len() {
        p[i] += 0.5 * eps * grad[i];
    }
    for i in 0..q.len() {
        q[i] += eps * p[i];
    }
    let logp = target.value_and_grad(q, grad);
    if logp.is_finite() {
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
    }
    logp
}

fn is_turning(q_minus: &[f64], q_plus: &[f64], p_minus: &[f64], p_plus: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..q_minus.len() {
        let dq = q_plus[i] - q_minus[i];
        dot_minus += dq * p_minus[i];
        dot_plus += dq * p_plus[i];
    }
    dot_minus < 0.0 || dot_plus < 0.0
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: DifferentiableTarget>(
    target: &T,
    leaf: &Leaf,
    direction: f64,
    depth: usize,
    eps: f64,
    h0: f64,
    rng: &mut ChaCha8Rng,
) -> Subtree {
    if depth == 0 {
        let mut q = leaf.q.clone();
        let mut p = leaf.p.clone();
        let mut grad = leaf.grad.clone();
        let logp = leapfrog(target, &mut q, &mut p, &mut grad, direction * eps);
        let h = if logp.is_finite() {
            hamiltonian(logp, &p)
        } else {
            f64::NEG_INFINITY
        };
        let delta = h - h0;
        let diverged = delta < -DIVERGENCE_THRESHOLD || !delta.is_finite();
        let alpha = delta.min(0.0).exp();
        return Subtree {
            q_minus: q.clone(),
            p_minus: p.clone(),
            grad_minus: grad.clone(),
            q_plus: q.clone(),
            p_plus: p.clone(),
            grad_plus: grad.clone(),
            q_prop: q,
            logp_prop: logp,
            log_sum_w: delta,
            sum_alpha: alpha,
            n_alpha: 1,
            diverged,
            stop: diverged,
        };
    }

    let mut first = build_tree(target, leaf, direction, depth - 1, eps, h0, rng);
    if first.stop {
        return first;
    }
    let inner_leaf = if direction < 0.0 {
        Leaf {
            q: first.q_minus.clone(),
            p: first.p_minus.clone(),
            grad: first.grad_minus.clone(),
        }
    } else {
        Leaf {
            q: first.q_plus.clone(),
            p: first.p_plus.clone(),
            grad: first.grad_plus.clone(),
        }
    };
    let second = build_tree(target, &inner_leaf, direction, depth - 1, eps, h0, rng);
    if direction < 0.0 {
        first.q_minus = second.q_minus.clone();
        first.p_minus = second.p_minus.clone();
        first.grad_minus = second.grad_minus.clone();
    } else {
        first.q_plus = second.q_plus.clone();
        first.p_plus = second.p_plus.clone();
        first.grad_plus = second.grad_plus.clone();
    }
    let total = log_add_exp(first.log_sum_w, second.log_sum_w);
    // multinomial sampling within the subtree
    let take_second: f64 = rng.gen();
    if (second.log_sum_w - total).exp() > take_second {
        first.q_prop = second.q_prop.clone();
        first.logp_prop = second.logp_prop;
    }
    first.log_sum_w = total;
    first.sum_alpha += second.sum_alpha;
    first.n_alpha += second.n_alpha;
    first.diverged |= second.diverged;
    first.stop = second.stop
        || is_turning(&first.q_minus, &first.q_plus, &first.p_minus, &first.p_plus);
    first
}

fn find_reasonable_epsilon<T: DifferentiableTarget>(
    target: &T,
    q0: &[f64],
    grad0: &[f64],
    logp0: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = q0.len();
    let mut eps = 1.0;
    let p0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let h0 = hamiltonian(logp0, &p0);
    let joint = |eps: f64| -> f64 {
        let mut q = q0.to_vec();
        let mut p = p0.clone();
        let mut grad = grad0.to_vec();
        let logp = leapfrog(target, &mut q, &mut p, &mut grad, eps);
        if logp.is_finite() {
            hamiltonian(logp, &p) - h0
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut delta = joint(eps);
    while !delta.is_finite() {
        eps *= 0.5;
        if eps < 1e-12 {
            return 1e-12;
        }
        delta = joint(eps);
    }
    let dir = if delta > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        if dir * delta <= dir * (0.5f64).ln() {
            break;
        }
        eps *= 2f64.powf(dir);
        delta = joint(eps);
        if !delta.is_finite() {
            eps *= 0.5;
            break;
        }
    }
    eps
}

/// Run one NUTS chain from `init`.
pub fn nuts_run<T: DifferentiableTarget>(
    target: &mut T,
    config: &NutsConfig,
    init: &[f64],
) -> Result<NutsChain> {
    config.validate()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::dims("init point dimension mismatch"));
    }
    let mut rng = StreamKey::new(config.seed, Domain::Stage1, 0).rng();

    target.refresh(0);
    let mut q = init.to_vec();
    let mut grad = vec![0.0; d];
    let mut logp = target.value_and_grad(&q, &mut grad);
    if !logp.is_finite() {
        return Err(Error::numerical(
            "NUTS initial point has non-finite log-density",
        ));
    }

    let mut eps = match config.init_step_size {
        Some(e) => e,
        None => find_reasonable_epsilon(target, &q, &grad, logp, &mut rng),
    };
    // dual averaging state
    let mu = (10.0 * eps).ln();
    let gamma = 0.05;
    let t0 = 10.0;
    let kappa = 0.75;
    let mut h_bar = 0.0;
    let mut log_eps_bar = 0.0;

    let total = config.warmup + config.draws;
    let mut draws = Vec::with_capacity(config.draws);
    let mut logps = Vec::with_capacity(config.draws);
    let mut divergent = Vec::with_capacity(config.draws);
    let mut divergences = 0;
    let mut warmup_divergences = 0;
    let mut accept_sum = 0.0;

    for m in 1..=total {
        if m > 1 {
            target.refresh((m - 1) as u64);
            logp = target.value_and_grad(&q, &mut grad);
            if !logp.is_finite() {
                // the refreshed noise can in principle invalidate the
                // current point; treat as a rejected iteration
                logp = f64::NEG_INFINITY;
            }
        }

        let mut iter_diverged = false;
        let mut alpha_stat = config.target_accept;
        if logp.is_finite() {
            let p0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let h0 = hamiltonian(logp, &p0);
            let mut tree = Subtree {
                q_minus: q.clone(),
                p_minus: p0.clone(),
                grad_minus: grad.clone(),
                q_plus: q.clone(),
                p_plus: p0.clone(),
                grad_plus: grad.clone(),
                q_prop: q.clone(),
                logp_prop: logp,
                log_sum_w: 0.0,
                sum_alpha: 0.0,
                n_alpha: 0,
                diverged: false,
                stop: false,
            };
            for depth in 0..config.max_depth {
                let direction: f64 = if rng.gen::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let leaf = if direction < 0.0 {
                    Leaf {
                        q: tree.q_minus.clone(),
                        p: tree.p_minus.clone(),
                        grad: tree.grad_minus.clone(),
                    }
                } else {
                    Leaf {
                        q: tree.q_plus.clone(),
                        p: tree.p_plus.clone(),
                        grad: tree.grad_plus.clone(),
                    }
                };
                let new = build_tree(target, &leaf, direction, depth, eps, h0, &mut rng);
                tree.sum_alpha += new.sum_alpha;
                tree.n_alpha += new.n_alpha;
                tree.diverged |= new.diverged;
                if !new.stop {
                    // biased progressive sampling toward the new subtree
                    let accept_p = (new.log_sum_w - tree.log_sum_w).exp().min(1.0);
                    if rng.gen::<f64>() < accept_p {
                        tree.q_prop = new.q_prop.clone();
                        tree.logp_prop = new.logp_prop;
                    }
                }
                if direction < 0.0 {
                    tree.q_minus = new.q_minus;
                    tree.p_minus = new.p_minus;
                    tree.grad_minus = new.grad_minus;
                } else {
                    tree.q_plus = new.q_plus;
                    tree.p_plus = new.p_plus;
                    tree.grad_plus = new.grad_plus;
                }
                if new.stop
                    || is_turning(&tree.q_minus, &tree.q_plus, &tree.p_minus, &tree.p_plus)
                {
                    break;
                }
                tree.log_sum_w = log_add_exp(tree.log_sum_w, new.log_sum_w);
            }
            iter_diverged = tree.diverged;
            alpha_stat = if tree.n_alpha > 0 {
                tree.sum_alpha / tree.n_alpha as f64
            } else {
                0.0
            };
            q = tree.q_prop;
            logp = tree.logp_prop;
        }

        accept_sum += alpha_stat;
        if m <= config.warmup {
            if iter_diverged {
                warmup_divergences += 1;
            }
            let mf = m as f64;
            let w = 1.0 / (mf + t0);
            h_bar = (1.0 - w) * h_bar + w * (config.target_accept - alpha_stat);
            let log_eps = mu - mf.sqrt() / gamma * h_bar;
            let step_w = mf.powf(-kappa);
            log_eps_bar = step_w * log_eps + (1.0 - step_w) * log_eps_bar;
            eps = log_eps.exp();
            if m == config.warmup {
                eps = log_eps_bar.exp();
            }
        } else {
            if iter_diverged {
                divergences += 1;
            }
            draws.push(q.clone());
            logps.push(logp);
            divergent.push(iter_diverged);
        }
    }

    let mean_accept = accept_sum / total as f64;
    let divergence_warning = divergences * 4 > config.draws;
    Ok(NutsChain {
        draws,
        logps,
        divergences,
        warmup_divergences,
        step_size: eps,
        mean_accept,
        divergence_warning,
        divergent,
    })
}
