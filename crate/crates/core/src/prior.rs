use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::params::ParameterVector;

/// One independent marginal of a product prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    Laplace { location: f64, scale: f64 },
}

impl Marginal {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::Laplace { location, scale } => {
                -(2.0 * scale).ln() - (x - location).abs() / scale
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                (lo + u * (hi - lo)).clamp(lo, hi)
            }
            Marginal::Laplace { location, scale } => {
                // inverse cdf on u in (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
                location - scale * u.signum() * tail.ln()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal::Laplace { location, .. } => location,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Marginal::Laplace { scale, .. } => 2.0 * scale * scale,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Marginal::Uniform { lo, hi } => Some((lo, hi)),
            Marginal::Laplace { .. } => None,
        }
    }

    fn validate(&self, index: usize) -> Result<(), CoreError> {
        let bad = |reason: &str| {
            Err(CoreError::InvalidMarginal {
                index,
                reason: reason.to_owned(),
            })
        };
        match *self {
            Marginal::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    bad("uniform bounds must be finite")
                } else if lo >= hi {
                    bad("uniform requires lo < hi")
                } else {
                    Ok(())
                }
            }
            Marginal::Laplace { location, scale } => {
                if !location.is_finite() || !scale.is_finite() {
                    bad("laplace parameters must be finite")
                } else if scale <= 0.0 {
                    bad("laplace scale must be positive")
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Product of independent marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Marginal>", into = "Vec<Marginal>")]
pub struct Prior {
    marginals: Vec<Marginal>,
}

impl Prior {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self, CoreError> {
        for (i, m) in marginals.iter().enumerate() {
            m.validate(i)?;
        }
        Ok(Self { marginals })
    }

    /// Convenience for an all-uniform box prior.
    pub fn uniform_box(bounds: &[(f64, f64)]) -> Result<Self, CoreError> {
        Self::new(
            bounds
                .iter()
                .map(|&(lo, hi)| Marginal::Uniform { lo, hi })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        let values = self.marginals.iter().map(|m| m.sample(rng)).collect();
        ParameterVector::new(values).expect("marginal draws are finite")
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, theta: &[f64]) -> Result<f64, CoreError> {
        if theta.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(self
            .marginals
            .iter()
            .zip(theta)
            .map(|(m, &x)| m.ln_pdf(x))
            .sum())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        matches!(self.ln_pdf(theta), Ok(lp) if lp.is_finite())
    }
}

impl TryFrom<Vec<Marginal>> for Prior {
    type Error = CoreError;

    fn try_from(marginals: Vec<Marginal>) -> Result<Self, Self::Error> {
        Prior::new(marginals)
    }
}

impl From<Prior> for Vec<Marginal> {
    fn from(p: Prior) -> Self {
        p.marginals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn uniform_density_values() {
        let p = Prior::uniform_box(&[(0.0, 1.0)]).unwrap();
        assert_eq!(p.ln_pdf(&[0.5]).unwrap(), 0.0);
        assert_eq!(p.ln_pdf(&[1.5]).unwrap(), f64::NEG_INFINITY);
        assert!(p.ln_pdf(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn laplace_density_at_location() {
        let p = Prior::new(vec![Marginal::Laplace {
            location: 0.0,
            scale: 2.0,
        }])
        .unwrap();
        // 1 / (2 * 2)
        let expected = (0.25f64).ln();
        assert!((p.ln_pdf(&[0.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - -1.386_294_4).abs() < 1e-7);
    }

    #[test]
    fn rejects_malformed_marginals() {
        assert!(Prior::uniform_box(&[(1.0, 1.0)]).is_err());
        assert!(Prior::uniform_box(&[(0.0, f64::INFINITY)]).is_err());
        assert!(Prior::new(vec![Marginal::Laplace {
            location: 0.0,
            scale: 0.0
        }])
        .is_err());
    }

    #[test]
    fn samples_stay_in_support() {
        let p = Prior::uniform_box(&[(0.0, 1.0); 3]).unwrap();
        let mut rng = SeedStream::new(3).rng();
        for _ in 0..10_000 {
            let t = p.sample(&mut rng);
            assert!(t.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // g_age over a 32 day experiment
        let g = Prior::uniform_box(&[(2.0, 24.0 * 32.0)]).unwrap();
        for _ in 0..1000 {
            let t = g.sample(&mut rng);
            assert!((2.0..=768.0).contains(&t[0]));
        }
    }

    #[test]
    fn uniform_sample_mean() {
        let p = Prior::uniform_box(&[(0.0, 10.0)]).unwrap();
        let mut rng = SeedStream::new(99).rng();
        let n = 100_000;
        let mean = (0..n).map(|_| p.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn roundtrips_through_serde_shape() {
        let p = Prior::new(vec![
            Marginal::Uniform { lo: 0.0, hi: 1.0 },
            Marginal::Laplace {
                location: 0.0,
                scale: 0.5,
            },
        ])
        .unwrap();
        let v: Vec<Marginal> = p.clone().into();
        assert_eq!(Prior::try_from(v).unwrap(), p);
    }
}
