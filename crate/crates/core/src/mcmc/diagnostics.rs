//! Chain diagnostics: rank-normalized split R-hat and autocorrelation-based
//! effective sample size.

use serde::{Deserialize, Serialize};

/// Inverse standard-normal CDF (Acklam's rational approximation;
/// relative error below 1.2e-9, ample for rank normalization).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must lie in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Diagnostics for a set of chains over one parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Rank-normalized split R-hat per parameter (NaN when undefined).
    pub rhat: Vec<f64>,
    /// Effective sample size per parameter (NaN when undefined).
    pub ess: Vec<f64>,
    /// Parameters whose chains were constant (diagnostics undefined).
    pub undefined: Vec<bool>,
    pub divergences: usize,
}

/// Rank-normalize pooled draws: average ranks for ties, then the normal
/// quantile of the fractional rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(chains.len());
    let mut off = 0;
    for c in chains {
        offsets.push(off);
        for (i, &v) in c.iter().enumerate() {
            indexed.push((v, off + i));
        }
        off += c.len();
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[indexed[k].1] = avg;
        }
        i = j + 1;
    }
    let s = total as f64;
    chains
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            (0..c.len())
                .map(|i| inverse_normal_cdf((ranks[offsets[ci] + i] - 0.375) / (s + 0.25)))
                .collect()
        })
        .collect()
}

fn split_in_half(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = chain_means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0)
        * chain_means
            .iter()
            .map(|cm| (cm - grand) * (cm - grand))
            .sum::<f64>();
    let w = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, cm)| c.iter().map(|v| (v - cm) * (v - cm)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat over chains of one scalar parameter.
/// Requires at least two chains and four draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    if is_constant(chains) {
        return f64::NAN;
    }
    let split = split_in_half(chains);
    let z = rank_normalize(&split);
    basic_rhat(&z)
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains
        .iter()
        .all(|c| c.iter().all(|&v| (v - first).abs() < 1e-300))
}

/// Effective sample size of pooled chains for one scalar parameter, using
/// per-chain autocovariances and Geyer's initial positive sequence
/// (truncation at the first negative even-odd pair sum).
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    if is_constant(chains) {
        return f64::NAN;
    }
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    // biased autocovariances per chain
    let acov = |c: &Vec<f64>, mean: f64, t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - t {
            s += (c[i] - mean) * (c[i + t] - mean);
        }
        s / nf
    };
    let vars: Vec<f64> = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, &mm)| acov(c, mm, 0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    let grand = chain_means.iter().sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 {
        chain_means
            .iter()
            .map(|cm| (cm - grand) * (cm - grand))
            .sum::<f64>()
            / (m - 1.0)
    } else {
        0.0
    };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if var_plus <= 0.0 {
        return f64::NAN;
    }

    let rho = |t: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&chain_means)
            .map(|(c, &mm)| acov(c, mm, t))
            .sum::<f64>()
            / m;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = 1.0;
    let mut t = 1;
    // pair (rho_1 handled inside the first pair with rho_0 = 1)
    let mut prev_pair = f64::INFINITY;
    loop {
        if t + 1 >= n {
            break;
        }
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        // enforce monotone non-increasing pair sums for stability
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        t += 2;
    }
    let total = m * nf;
    (total / tau).min(total)
}

/// Diagnostics across chains for a multi-parameter draw matrix
/// (`chains[c][iter][param]`).
pub fn diagnostics(chains: &[Vec<Vec<f64>>], divergences: usize) -> Diagnostics {
    assert!(!chains.is_empty() && !chains[0].is_empty());
    let dim = chains[0][0].len();
    let mut rhat = Vec::with_capacity(dim);
    let mut ess_v = Vec::with_capacity(dim);
    let mut undefined = Vec::with_capacity(dim);
    for j in 0..dim {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|d| d[j]).collect())
            .collect();
        let r = split_rhat(&per_chain);
        let e = ess(&per_chain);
        undefined.push(r.is_nan() || e.is_nan());
        rhat.push(r);
        ess_v.push(e);
    }
    Diagnostics {
        rhat,
        ess: ess_v,
        undefined,
        divergences,
    }
}
