//! Normal-mean toy model with a closed-form posterior, used as an oracle
//! target by the inference test suites and exposed as `toy-gaussian`.

use crate::error::SimError;
use crate::linalg::standard_normal;
use crate::params::SummaryVector;
use crate::prior::Prior;
use crate::rng::SeedStream;
use crate::simulator::{finite_summary, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToySummary {
    /// Sample mean only.
    Mean,
    /// Sample mean and unbiased sample variance.
    MeanVar,
}

/// `n_obs` draws from `Normal(theta, sigma²)`, `theta ~ Uniform(lo, hi)`.
#[derive(Debug, Clone)]
pub struct GaussianToy {
    pub n_obs: usize,
    pub sigma: f64,
    pub summary: ToySummary,
    prior: Prior,
}

impl GaussianToy {
    pub fn new(n_obs: usize, sigma: f64, bounds: (f64, f64), summary: ToySummary) -> Self {
        assert!(n_obs >= 2 && sigma > 0.0);
        Self {
            n_obs,
            sigma,
            summary,
            prior: Prior::uniform_box(&[bounds]).expect("valid toy bounds"),
        }
    }

    /// 100 observations, unit noise, `Uniform(-10, 10)` prior.
    pub fn standard(summary: ToySummary) -> Self {
        Self::new(100, 1.0, (-10.0, 10.0), summary)
    }

    /// Standard deviation of the sample-mean summary.
    pub fn mean_sd(&self) -> f64 {
        self.sigma / (self.n_obs as f64).sqrt()
    }
}

impl Simulator for GaussianToy {
    type Output = Vec<f64>;

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn summary_dim(&self) -> usize {
        match self.summary {
            ToySummary::Mean => 1,
            ToySummary::MeanVar => 2,
        }
    }

    fn simulate(&self, theta: &[f64], seed: SeedStream) -> Result<Vec<f64>, SimError> {
        let mut rng = seed.rng();
        Ok((0..self.n_obs)
            .map(|_| theta[0] + self.sigma * standard_normal(&mut rng))
            .collect())
    }

    fn summarize(&self, x: &Vec<f64>) -> Result<SummaryVector, SimError> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        match self.summary {
            ToySummary::Mean => finite_summary(vec![mean]),
            ToySummary::MeanVar => {
                let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                finite_summary(vec![mean, var])
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::SummaryModel;

    #[test]
    fn summary_dims_and_determinism() {
        let m = GaussianToy::standard(ToySummary::MeanVar);
        let a = m.simulate_summary(&[2.0], SeedStream::new(4)).unwrap();
        let b = m.simulate_summary(&[2.0], SeedStream::new(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!((a[0] - 2.0).abs() < 0.5);
    }
}
