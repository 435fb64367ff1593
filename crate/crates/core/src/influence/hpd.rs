//! Highest-posterior-density regions on a raster via kernel density
//! estimation.

use crate::error::{Error, Result};
use crate::model::profiles::Region;

/// Per-level boolean masks over a raster of the region; `masks[l][iy * nx
/// + ix]` marks cells inside the level-l HPD region.
#[derive(Debug, Clone)]
pub struct HpdMasks {
    pub nx: usize,
    pub ny: usize,
    pub region: Region,
    pub levels: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
    /// Kernel density estimate on the raster (cell-probability
    /// normalized).
    pub density: Vec<f64>,
    /// Set when the draws were degenerate (zero variance).
    pub degenerate: bool,
}

/// HPD masks via a Gaussian-kernel density estimate with Scott's-rule
/// bandwidth. Each mask is the smallest-threshold superlevel set whose
/// enclosed probability reaches the level.
pub fn hpd_regions(
    draws: &[(f64, f64)],
    levels: &[f64],
    region: &Region,
    nx: usize,
    ny: usize,
) -> Result<HpdMasks> {
    if draws.len() < 100 {
        return Err(Error::invalid("HPD estimation needs at least 100 draws"));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::invalid("raster must have at least 2x2 cells"));
    }
    if levels.iter().any(|l| !(0.0 < *l && *l < 1.0)) {
        return Err(Error::invalid("levels must lie in (0, 1)"));
    }
    let n = draws.len() as f64;
    let mean_x = draws.iter().map(|d| d.0).sum::<f64>() / n;
    let mean_y = draws.iter().map(|d| d.1).sum::<f64>() / n;
    let var_x = draws.iter().map(|d| (d.0 - mean_x) * (d.0 - mean_x)).sum::<f64>() / (n - 1.0);
    let var_y = draws.iter().map(|d| (d.1 - mean_y) * (d.1 - mean_y)).sum::<f64>() / (n - 1.0);

    let cells = nx * ny;
    let cell_w = region.width / nx as f64;
    let cell_h = region.height / ny as f64;
    let centers: Vec<(f64, f64)> = (0..cells)
        .map(|c| {
            (
                (c % nx) as f64 * cell_w + 0.5 * cell_w,
                (c / nx) as f64 * cell_h + 0.5 * cell_h,
            )
        })
        .collect();

    let degenerate = var_x < 1e-12 && var_y < 1e-12;
    let mut density = vec![0.0; cells];
    if degenerate {
        // everything in one cell
        let ix = ((mean_x / cell_w) as usize).min(nx - 1);
        let iy = ((mean_y / cell_h) as usize).min(ny - 1);
        density[iy * nx + ix] = 1.0;
    } else {
        // Scott's rule in two dimensions: h_j = sigma_j n^(-1/6)
        let hx = var_x.sqrt().max(1e-6) * n.powf(-1.0 / 6.0);
        let hy = var_y.sqrt().max(1e-6) * n.powf(-1.0 / 6.0);
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            let mut acc = 0.0;
            for &(x, y) in draws {
                let dx = (x - cx) / hx;
                let dy = (y - cy) / hy;
                acc += (-0.5 * (dx * dx + dy * dy)).exp();
            }
            density[c] = acc / (n * 2.0 * std::f64::consts::PI * hx * hy);
        }
        let total: f64 = density.iter().sum();
        if total <= 0.0 {
            return Err(Error::numerical("degenerate kernel density estimate"));
        }
        for d in density.iter_mut() {
            *d /= total;
        }
    }

    // descending-density cumulative inclusion
    let mut order: Vec<usize> = (0..cells).collect();
    order.sort_by(|&a, &b| density[b].partial_cmp(&density[a]).unwrap());
    let mut sorted_levels: Vec<(usize, f64)> =
        levels.iter().cloned().enumerate().collect();
    sorted_levels.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    let mut masks = vec![vec![false; cells]; levels.len()];
    let mut cum = 0.0;
    let mut li = 0;
    let mut included: Vec<usize> = Vec::new();
    for &c in &order {
        cum += density[c];
        included.push(c);
        while li < sorted_levels.len() && cum >= sorted_levels[li].1 - 1e-12 {
            let (orig, _) = sorted_levels[li];
            for &cc in &included {
                masks[orig][cc] = true;
            }
            li += 1;
        }
        if li == sorted_levels.len() {
            break;
        }
    }
    // numerical shortfall: any remaining level covers everything included
    while li < sorted_levels.len() {
        let (orig, _) = sorted_levels[li];
        for &cc in &included {
            masks[orig][cc] = true;
        }
        li += 1;
    }

    Ok(HpdMasks {
        nx,
        ny,
        region: *region,
        levels: levels.to_vec(),
        masks,
        density,
        degenerate,
    })
}
