//! Bounded-to-unbounded reparameterisation.
//!
//! Uniform marginals are mapped through a scaled logit, unbounded marginals
//! pass through unchanged. Random-walk kernels operate on the transformed
//! coordinates and correct the target by the inverse log-Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::prior::{Marginal, Prior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DimTransform {
    Identity,
    Logit { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTransform {
    dims: Vec<DimTransform>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl BoundTransform {
    pub fn new(dims: Vec<DimTransform>) -> Self {
        Self { dims }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(vec![DimTransform::Identity; dim])
    }

    /// Logit for every uniform marginal, identity otherwise.
    pub fn from_prior(prior: &Prior) -> Self {
        Self::new(
            prior
                .marginals()
                .iter()
                .map(|m| match *m {
                    Marginal::Uniform { lo, hi } => DimTransform::Logit { lo, hi },
                    Marginal::Laplace { .. } => DimTransform::Identity,
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    fn check_dim(&self, n: usize) -> Result<(), CoreError> {
        if n != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    /// Bounded -> unbounded. Boundary and exterior points are domain errors.
    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>, CoreError> {
        self.check_dim(theta.len())?;
        self.dims
            .iter()
            .zip(theta)
            .enumerate()
            .map(|(index, (t, &x))| match *t {
                DimTransform::Identity => Ok(x),
                DimTransform::Logit { lo, hi } => {
                    if !(x > lo && x < hi) {
                        return Err(CoreError::Domain {
                            index,
                            value: x,
                            lo,
                            hi,
                        });
                    }
                    Ok(((x - lo) / (hi - x)).ln())
                }
            })
            .collect()
    }

    /// Like [`forward`](Self::forward) but first pulls points on (or
    /// numerically past) a logit boundary inside by `1e-12` of the width.
    /// Prior draws can land exactly on `lo`.
    pub fn forward_clamped(&self, theta: &[f64]) -> Result<Vec<f64>, CoreError> {
        self.check_dim(theta.len())?;
        let pulled: Vec<f64> = self
            .dims
            .iter()
            .zip(theta)
            .map(|(t, &x)| match *t {
                DimTransform::Identity => x,
                DimTransform::Logit { lo, hi } => {
                    let eps = 1e-12 * (hi - lo);
                    x.clamp(lo + eps, hi - eps)
                }
            })
            .collect();
        self.forward(&pulled)
    }

    /// `ln |dz/dθ|` at an interior point.
    pub fn forward_log_jacobian(&self, theta: &[f64]) -> Result<f64, CoreError> {
        let z = self.forward(theta)?;
        Ok(-self.inverse_log_jacobian(&z))
    }

    /// Unbounded -> bounded.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim(), "transform dimension");
        self.dims
            .iter()
            .zip(z)
            .map(|(t, &u)| match *t {
                DimTransform::Identity => u,
                DimTransform::Logit { lo, hi } => {
                    let w = hi - lo;
                    if u >= 0.0 {
                        hi - w / (1.0 + u.exp())
                    } else {
                        lo + w / (1.0 + (-u).exp())
                    }
                }
            })
            .collect()
    }

    /// `ln |dθ/dz|` at an unbounded point.
    pub fn inverse_log_jacobian(&self, z: &[f64]) -> f64 {
        self.dims
            .iter()
            .zip(z)
            .map(|(t, &u)| match *t {
                DimTransform::Identity => 0.0,
                DimTransform::Logit { lo, hi } => (hi - lo).ln() - softplus(u) - softplus(-u),
            })
            .sum()
    }
}
