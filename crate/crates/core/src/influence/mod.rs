//! Held-out-anchor validation, the influence loss curve, HPD summaries
//! and new-profile prediction.

pub mod hpd;
pub mod predict;
pub mod split;

pub use hpd::{hpd_regions, HpdMasks};
pub use predict::{predict_new_profile, PredictConfig, Prediction};
pub use split::{make_validation_split, ValidationSplit};

use crate::error::{Error, Result};

/// Posterior mean squared error of held-out locations: the mean over
/// profiles of the mean over draws of the squared Euclidean distance to
/// the true location (region units).
pub fn loss_v(draws: &[Vec<(f64, f64)>], truths: &[(f64, f64)]) -> Result<f64> {
    if draws.len() != truths.len() {
        return Err(Error::dims("one draw set per held-out profile"));
    }
    if draws.is_empty() {
        return Err(Error::invalid("need at least one held-out profile"));
    }
    let mut total = 0.0;
    for (ds, &(tx, ty)) in draws.iter().zip(truths) {
        if ds.is_empty() {
            return Err(Error::invalid("empty draw set for a held-out profile"));
        }
        let mean_sq = ds
            .iter()
            .map(|&(x, y)| (x - tx) * (x - tx) + (y - ty) * (y - ty))
            .sum::<f64>()
            / ds.len() as f64;
        total += mean_sq;
    }
    Ok(total / draws.len() as f64)
}

/// Monte-Carlo standard error of [`loss_v`] over draws (draws assumed
/// independent across indices, as flow samples are).
pub fn loss_v_stderr(draws: &[Vec<(f64, f64)>], truths: &[(f64, f64)]) -> Result<f64> {
    if draws.is_empty() || draws.len() != truths.len() {
        return Err(Error::dims("one draw set per held-out profile"));
    }
    let n = draws[0].len();
    if n < 2 || draws.iter().any(|d| d.len() != n) {
        return Err(Error::invalid("need >= 2 draws, equal counts per profile"));
    }
    let k = draws.len() as f64;
    // per-draw-index loss values are iid across draws
    let vals: Vec<f64> = (0..n)
        .map(|s| {
            draws
                .iter()
                .zip(truths)
                .map(|(ds, &(tx, ty))| {
                    let (x, y) = ds[s];
                    (x - tx) * (x - tx) + (y - ty) * (y - ty)
                })
                .sum::<f64>()
                / k
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok((var / n as f64).sqrt())
}

/// Mean distance between posterior-mean point predictions and truths.
pub fn mean_distance(draws: &[Vec<(f64, f64)>], truths: &[(f64, f64)]) -> Result<f64> {
    if draws.len() != truths.len() {
        return Err(Error::dims("one draw set per held-out profile"));
    }
    if draws.is_empty() {
        return Err(Error::invalid("need at least one held-out profile"));
    }
    let mut total = 0.0;
    for (ds, &(tx, ty)) in draws.iter().zip(truths) {
        if ds.is_empty() {
            return Err(Error::invalid("empty draw set for a held-out profile"));
        }
        let n = ds.len() as f64;
        let mx = ds.iter().map(|d| d.0).sum::<f64>() / n;
        let my = ds.iter().map(|d| d.1).sum::<f64>() / n;
        total += ((mx - tx) * (mx - tx) + (my - ty) * (my - ty)).sqrt();
    }
    Ok(total / draws.len() as f64)
}

/// Arg-min over the influence grid; ties break toward the smallest eta.
pub fn select_eta(grid: &[f64], losses: &[f64]) -> Result<f64> {
    if grid.is_empty() || grid.len() != losses.len() {
        return Err(Error::dims("grid and losses must be non-empty and equal"));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::invalid("NaN loss in eta selection"));
    }
    let mut pairs: Vec<(f64, f64)> = grid.iter().cloned().zip(losses.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut best = pairs[0];
    for &(eta, loss) in &pairs[1..] {
        if loss < best.1 {
            best = (eta, loss);
        }
    }
    Ok(best.0)
}
