//! Inducing-point lattice with cached covariance factorizations.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::model::profiles::Region;

use super::kernel::{kernel_matrix, KernelConfig};

/// A regular lattice of inducing points over the region, with the inducing
/// covariance K_U factorized once at construction.
#[derive(Debug, Clone)]
pub struct InducingGrid {
    points: Vec<(f64, f64)>,
    kernel: KernelConfig,
    k_u: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    inv_k_u: DMatrix<f64>,
    log_det_k_u: f64,
}

impl InducingGrid {
    /// Lattice dividing the region `g` times vertically and horizontally,
    /// giving (g+1)^2 points. The paper-scale default is g = 10.
    pub fn lattice(g: usize, region: &Region, kernel: &KernelConfig) -> Result<Self> {
        if g == 0 {
            return Err(Error::invalid("inducing grid needs at least one division"));
        }
        let mut points = Vec::with_capacity((g + 1) * (g + 1));
        for iy in 0..=g {
            for ix in 0..=g {
                points.push((
                    region.width * ix as f64 / g as f64,
                    region.height * iy as f64 / g as f64,
                ));
            }
        }
        Self::from_points(points, kernel)
    }

    pub fn from_points(points: Vec<(f64, f64)>, kernel: &KernelConfig) -> Result<Self> {
        kernel.validate()?;
        for (i, p) in points.iter().enumerate() {
            for q in points.iter().skip(i + 1) {
                if p == q {
                    return Err(Error::invalid("duplicate inducing point"));
                }
            }
        }
        let k_u = kernel_matrix(&points, &points, kernel, true)?;
        let chol = Cholesky::new(k_u.clone())
            .ok_or_else(|| Error::numerical("K_U + jitter I is not positive definite"))?;
        let inv_k_u = chol.inverse();
        let log_det_k_u = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(InducingGrid {
            points,
            kernel: kernel.clone(),
            k_u,
            chol,
            inv_k_u,
            log_det_k_u,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn k_u(&self) -> &DMatrix<f64> {
        &self.k_u
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn inv_k_u(&self) -> &DMatrix<f64> {
        &self.inv_k_u
    }

    /// log det K_U (including jitter).
    pub fn log_det_k_u(&self) -> f64 {
        self.log_det_k_u
    }

    /// Log-density of one basis field's inducing values under N(0, K_U).
    pub fn log_prior(&self, values: &[f64]) -> f64 {
        let u = self.len();
        assert_eq!(values.len(), u);
        let v = nalgebra::DVector::from_column_slice(values);
        let alpha = self.chol.solve(&v);
        -0.5 * v.dot(&alpha)
            - 0.5 * self.log_det_k_u
            - 0.5 * u as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}
