//! Squared-exponential kernel evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential kernel hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Amplitude sigma_k (standard-deviation scale).
    pub amplitude: f64,
    /// Length scale in region units.
    pub length_scale: f64,
    /// Diagonal jitter added to square self-covariances.
    pub jitter: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            amplitude: 1.0,
            length_scale: 0.2,
            jitter: 1e-6,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) || !(self.length_scale > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::invalid(
                "kernel hyperparameters must be positive (jitter non-negative)",
            ));
        }
        Ok(())
    }

    /// k(p, q) without jitter.
    #[inline]
    pub fn eval(&self, p: (f64, f64), q: (f64, f64)) -> f64 {
        let dx = p.0 - q.0;
        let dy = p.1 - q.1;
        let d2 = dx * dx + dy * dy;
        self.amplitude * self.amplitude * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Cross-covariance matrix K[i][j] = k(a_i, b_j). Jitter is added only when
/// `self_cov` marks a square self-covariance.
pub fn kernel_matrix(
    points_a: &[(f64, f64)],
    points_b: &[(f64, f64)],
    config: &KernelConfig,
    self_cov: bool,
) -> Result<DMatrix<f64>> {
    config.validate()?;
    for &(x, y) in points_a.iter().chain(points_b.iter()) {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("non-finite coordinate in kernel_matrix"));
        }
    }
    let mut k = DMatrix::zeros(points_a.len(), points_b.len());
    for (i, &p) in points_a.iter().enumerate() {
        for (j, &q) in points_b.iter().enumerate() {
            k[(i, j)] = config.eval(p, q);
        }
    }
    if self_cov {
        if points_a.len() != points_b.len() {
            return Err(Error::dims("self-covariance requires square inputs"));
        }
        for i in 0..points_a.len() {
            k[(i, i)] += config.jitter;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_is_amplitude_squared() {
        let cfg = KernelConfig {
            amplitude: 1.7,
            length_scale: 0.3,
            jitter: 1e-6,
        };
        let pts = [(0.4, 0.2)];
        let k = kernel_matrix(&pts, &pts, &cfg, true).unwrap();
        assert!((k[(0, 0)] - (1.7 * 1.7 + 1e-6)).abs() < 1e-15);
        let k = kernel_matrix(&pts, &pts, &cfg, false).unwrap();
        assert!((k[(0, 0)] - 1.7 * 1.7).abs() < 1e-15);
    }

    #[test]
    fn unit_amplitude_at_one_length_scale() {
        // sigma_k = 1, l = 0.2, |x - x'| = 0.2 -> exp(-0.5)
        let cfg = KernelConfig::default();
        let k = kernel_matrix(&[(0.0, 0.0)], &[(0.2, 0.0)], &cfg, false).unwrap();
        assert!((k[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k[(0, 0)] - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn cross_covariance_transpose_symmetry() {
        let cfg = KernelConfig::default();
        let a = [(0.1, 0.2), (0.5, 0.7), (0.9, 0.1)];
        let b = [(0.3, 0.3), (0.6, 0.8)];
        let kab = kernel_matrix(&a, &b, &cfg, false).unwrap();
        let kba = kernel_matrix(&b, &a, &cfg, false).unwrap();
        assert_eq!(kab, kba.transpose());
    }

    #[test]
    fn non_finite_rejected() {
        let cfg = KernelConfig::default();
        assert!(kernel_matrix(&[(f64::NAN, 0.0)], &[(0.0, 0.0)], &cfg, false).is_err());
    }
}
