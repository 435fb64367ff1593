//! Gaussian conditioning on inducing values.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::inducing::InducingGrid;
use super::kernel::kernel_matrix;

/// Jitter escalation ladder applied before declaring a covariance
/// numerically unusable.
pub const JITTER_LADDER: [f64; 3] = [1e-6, 1e-5, 1e-4];

/// Conditional covariances with every entry below this threshold are
/// treated as exactly degenerate (query points coincide with inducing
/// points), with a zero Cholesky factor.
pub const DEGENERATE_COV_EPS: f64 = 1e-10;

/// Conditional of the basis field at `x_new` given inducing values:
/// mean `K_{N,U} K_U^{-1} G_U`, covariance
/// `K_N - K_{N,U} K_U^{-1} K_{N,U}^t`, symmetrized and jittered.
pub fn conditional_gaussian(
    inducing_values: &[f64],
    grid: &InducingGrid,
    x_new: &[(f64, f64)],
    // jitter added to the conditional covariance before factorization
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if inducing_values.len() != grid.len() {
        return Err(Error::dims(
            "inducing values length must match the inducing grid",
        ));
    }
    let k_nu = kernel_matrix(x_new, grid.points(), grid.kernel(), false)?;
    let k_n = kernel_matrix(x_new, x_new, grid.kernel(), false)?;
    let g = DVector::from_column_slice(inducing_values);
    // V = K_U^{-1} K_{N,U}^t via the cached factorization
    let v = grid.cholesky().solve(&k_nu.transpose());
    let mean = &k_nu * grid.cholesky().solve(&g);
    let mut cov = &k_n - &k_nu * v;
    // symmetrize
    for i in 0..cov.nrows() {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok((mean, cov))
}

/// Cholesky with the escalation ladder; returns the lower factor and the
/// jitter that succeeded. A covariance that is degenerate to within
/// [`DEGENERATE_COV_EPS`] short-circuits to a zero factor.
pub fn stabilized_cholesky(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = cov.nrows();
    let max_abs = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs < DEGENERATE_COV_EPS {
        return Ok((DMatrix::zeros(n, n), 0.0));
    }
    for &jit in &JITTER_LADDER {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jit;
        }
        if let Some(chol) = nalgebra::Cholesky::new(c) {
            return Ok((chol.unpack(), jit));
        }
    }
    Err(Error::numerical(format!(
        "conditional covariance not positive definite after jitter up to {:e} (n = {}, max |c| = {:.3e})",
        JITTER_LADDER[JITTER_LADDER.len() - 1],
        n,
        max_abs
    )))
}
