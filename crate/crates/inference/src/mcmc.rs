//! Generic MCMC building blocks: univariate slice sampling, a random-walk
//! Metropolis chain with burn-in covariance adaptation, and batch-means
//! standard errors.

use cellsbi_core::linalg::{mean_and_cov, psd_factor, sample_correlated};
use cellsbi_core::{BoundTransform, Prior, SeedStream};
use nalgebra::DMatrix;
use rand::Rng;

/// One slice-sampling update (stepping out, then shrinkage).
///
/// `log_f` is the unnormalised log density; `x0` must have finite density.
/// Returns the new point and the number of density evaluations.
pub fn slice_sample<R, F>(x0: f64, mut log_f: F, width: f64, max_steps: usize, rng: &mut R) -> (f64, usize)
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let mut evals = 1;
    let f0 = log_f(x0);
    debug_assert!(f0.is_finite(), "slice sampler started at zero density");
    let level = f0 + rng.random::<f64>().max(f64::MIN_POSITIVE).ln();

    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let j = (max_steps as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = max_steps.saturating_sub(1).saturating_sub(j);
    let mut j = j;
    while j > 0 && log_f(left) > level {
        evals += 1;
        left -= width;
        j -= 1;
    }
    evals += 1;
    while k > 0 && log_f(right) > level {
        evals += 1;
        right += width;
        k -= 1;
    }
    evals += 1;

    loop {
        let x1 = left + rng.random::<f64>() * (right - left);
        evals += 1;
        if log_f(x1) > level {
            return (x1, evals);
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
        if right - left < 1e-14 * (1.0 + x0.abs()) {
            return (x0, evals);
        }
    }
}

/// Diagonal proposal covariance in the unconstrained space: `frac` times the
/// per-dimension variance of 500 transformed prior draws.
pub fn prior_scaled_proposal(prior: &Prior, frac: f64, seed: SeedStream) -> DMatrix<f64> {
    let transform = BoundTransform::from_prior(prior);
    let mut rng = seed.rng();
    let z: Vec<Vec<f64>> = (0..500)
        .filter_map(|_| transform.forward_clamped(&prior.sample(&mut rng)).ok())
        .collect();
    let (_, cov) = mean_and_cov(&z);
    let d = cov.nrows();
    DMatrix::from_fn(d, d, |i, j| if i == j { frac * cov[(i, i)] } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct RwmChain {
    pub samples: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Acceptance rate over the kept (post burn-in) iterations.
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone)]
pub struct RwmSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Initial proposal covariance.
    pub proposal_cov: DMatrix<f64>,
    /// Adapt the covariance during burn-in from the chain history.
    pub adapt: bool,
}

/// Random-walk Metropolis on an unconstrained target.
///
/// During burn-in the proposal covariance is periodically replaced by
/// `2.38² / d` times the empirical covariance of the history; after burn-in
/// it is frozen and the next `n_iter` states are returned.
pub fn run_rwm<F>(mut log_target: F, z0: &[f64], settings: &RwmSettings, seed: SeedStream) -> RwmChain
where
    F: FnMut(&[f64]) -> f64,
{
    let d = z0.len();
    let mut rng = seed.rng();
    let mut factor = psd_factor(&settings.proposal_cov).expect("proposal covariance must be PSD");
    let mut z = z0.to_vec();
    let mut lp = log_target(&z);
    let total = settings.burn_in + settings.n_iter;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(settings.burn_in);
    let mut out = RwmChain {
        samples: Vec::with_capacity(settings.n_iter),
        log_target: Vec::with_capacity(settings.n_iter),
        accepted: Vec::with_capacity(settings.n_iter),
        acceptance_rate: 0.0,
    };
    let scale = 2.38f64.powi(2) / d as f64;
    for it in 0..total {
        let prop = sample_correlated(&mut rng, &z, &factor);
        let lp_prop = log_target(&prop);
        let u: f64 = rng.random();
        let acc = lp_prop.is_finite() && u.ln() < lp_prop - lp;
        if acc {
            z = prop;
            lp = lp_prop;
        }
        if it < settings.burn_in {
            history.push(z.clone());
            let n = history.len();
            if settings.adapt && n >= 10 * d.max(2) && n % 50 == 0 {
                let (_, cov) = mean_and_cov(&history);
                let mut c = cov * scale;
                for i in 0..d {
                    c[(i, i)] += 1e-10;
                }
                if let Ok(f) = psd_factor(&c) {
                    if f.iter().any(|v| *v != 0.0) {
                        factor = f;
                    }
                }
            }
        } else {
            out.samples.push(z.clone());
            out.log_target.push(lp);
            out.accepted.push(acc);
        }
    }
    let n = out.accepted.len().max(1);
    out.acceptance_rate = out.accepted.iter().filter(|&&a| a).count() as f64 / n as f64;
    out
}

/// Monte Carlo standard error of the mean of a correlated sequence via
/// non-overlapping batch means with `floor(sqrt(n))` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let n_batches = ((n as f64).sqrt().floor() as usize).max(2);
    let size = n / n_batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..n_batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    cellsbi_core::stats::std_dev(&means) / (n_batches as f64).sqrt()
}
