//! Neural likelihood estimation with MCMC on the learned likelihood, and the
//! robust variant that adjusts the observed summary by a Laplace-distributed
//! shift in standardised units.

use cellsbi_core::linalg::{mean_and_cov, psd_factor, sample_correlated};
use cellsbi_core::simulator::simulate_valid;
use cellsbi_core::{BoundTransform, Marginal, Prior, SeedStream, SummaryModel};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::{train_cnde, ConditionalDensityEstimator, Direction, Standardizer, TrainingConfig};
use super::npe::{RoundReport, TrainingSet};
use super::NeuralError;
use crate::mcmc::{prior_scaled_proposal, run_rwm, slice_sample, RwmSettings};

/// A (possibly learned) likelihood of an observed summary.
pub trait LogLikelihood: Sync {
    fn ln_likelihood(&self, theta: &[f64], observed: &[f64]) -> f64;

    /// Standardisation of the summary space; the identity when absent.
    fn summary_standardizer(&self) -> Option<&Standardizer> {
        None
    }
}

impl LogLikelihood for ConditionalDensityEstimator {
    fn ln_likelihood(&self, theta: &[f64], observed: &[f64]) -> f64 {
        self.ln_density(theta, observed)
    }

    fn summary_standardizer(&self) -> Option<&Standardizer> {
        Some(&self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Proposal covariance in the unconstrained space.
    pub proposal_cov: Option<Vec<Vec<f64>>>,
    pub theta0: Option<Vec<f64>>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 1_000,
            proposal_cov: None,
            theta0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsnlConfig {
    pub mcmc: McmcConfig,
    /// Laplace scale multiplier on the standardised observed summary.
    pub tau: f64,
    pub lambda_floor: f64,
    /// Hold the adjustment at zero, reducing to plain NLE.
    pub fix_gamma: bool,
}

impl Default for RsnlConfig {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            tau: 0.3,
            lambda_floor: 1e-2,
            fix_gamma: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorChain {
    pub theta: Vec<Vec<f64>>,
    /// Empty rows when no adjustment is sampled.
    pub gamma: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub acceptance_rate: f64,
    /// Laplace scales used for the adjustment, if any.
    pub lambda: Vec<f64>,
}

impl PosteriorChain {
    pub fn theta_column(&self, k: usize) -> Vec<f64> {
        self.theta.iter().map(|t| t[k]).collect()
    }

    pub fn gamma_column(&self, k: usize) -> Vec<f64> {
        self.gamma.iter().map(|g| g[k]).collect()
    }
}

struct Setup {
    transform: BoundTransform,
    z0: Vec<f64>,
    cov: DMatrix<f64>,
}

fn setup(prior: &Prior, config: &McmcConfig, seed: SeedStream) -> Result<Setup, NeuralError> {
    let d = prior.dim();
    if config.n_iter == 0 {
        return Err(NeuralError::Config("n_iter must be positive".into()));
    }
    let theta0 = match &config.theta0 {
        Some(t) if t.len() == d => t.clone(),
        Some(_) => return Err(NeuralError::Config(format!("theta0 must have {d} entries"))),
        None => prior.marginals().iter().map(Marginal::mean).collect(),
    };
    if !prior.contains(&theta0) {
        return Err(NeuralError::InitialOutsideSupport);
    }
    let transform = BoundTransform::from_prior(prior);
    let z0 = transform.forward_clamped(&theta0)?;
    let cov = match &config.proposal_cov {
        Some(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(NeuralError::Config(format!("proposal_cov must be {d}x{d}")));
            }
            DMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
        None => prior_scaled_proposal(prior, 0.01, seed.child(u64::MAX)),
    };
    Ok(Setup { transform, z0, cov })
}

fn ln_prior_z(prior: &Prior, transform: &BoundTransform, z: &[f64], theta: &[f64]) -> f64 {
    match prior.ln_pdf(theta) {
        Ok(lp) if lp.is_finite() => lp + transform.inverse_log_jacobian(z),
        _ => f64::NEG_INFINITY,
    }
}

/// Random-walk Metropolis in the unconstrained space targeting
/// `prior(theta) * likelihood(observed | theta)`.
pub fn nle_posterior_sample(
    lik: &dyn LogLikelihood,
    prior: &Prior,
    observed: &[f64],
    config: &McmcConfig,
    seed: SeedStream,
) -> Result<PosteriorChain, NeuralError> {
    let s = setup(prior, config, seed)?;
    let target = |z: &[f64]| {
        let theta = s.transform.inverse(z);
        let lp = ln_prior_z(prior, &s.transform, z, &theta);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ll = lik.ln_likelihood(&theta, observed);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp + ll
        }
    };
    if !target(&s.z0).is_finite() {
        return Err(NeuralError::NonFiniteInitial);
    }
    let settings = RwmSettings {
        n_iter: config.n_iter,
        burn_in: config.burn_in,
        proposal_cov: s.cov.clone(),
        adapt: true,
    };
    let chain = run_rwm(target, &s.z0, &settings, seed);
    Ok(PosteriorChain {
        theta: chain.samples.iter().map(|z| s.transform.inverse(z)).collect(),
        gamma: vec![Vec::new(); chain.samples.len()],
        log_target: chain.log_target,
        acceptance_rate: chain.acceptance_rate,
        lambda: Vec::new(),
    })
}

fn laplace_ln(g: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - g.abs() / scale
}

/// Laplace scales `max(|tau * s|, floor)` for the standardised observed summary.
pub fn rsnl_scales(observed_std: &[f64], tau: f64, floor: f64) -> Vec<f64> {
    observed_std.iter().map(|s| (tau * s).abs().max(floor)).collect()
}

/// Joint chain over `(theta, gamma)` targeting
/// `q(S(y) - gamma | theta) p(theta) prod Laplace(gamma_i; 0, lambda_i)`,
/// with `S(y)` and `gamma` in standardised summary units.
pub fn rsnl_posterior_sample(
    lik: &dyn LogLikelihood,
    prior: &Prior,
    observed: &[f64],
    config: &RsnlConfig,
    seed: SeedStream,
) -> Result<PosteriorChain, NeuralError> {
    if !(config.tau.is_finite() && config.tau > 0.0) || !(config.lambda_floor > 0.0) {
        return Err(NeuralError::Config("tau and lambda_floor must be positive".into()));
    }
    let s = setup(prior, &config.mcmc, seed)?;
    let identity = Standardizer::identity(observed.len());
    let st = lik.summary_standardizer().unwrap_or(&identity);
    let y_std = st.apply(observed);
    let lambda = rsnl_scales(&y_std, config.tau, config.lambda_floor);
    let d_s = observed.len();
    let d_t = prior.dim();

    let loglik = |theta: &[f64], gamma: &[f64]| {
        let shifted: Vec<f64> = y_std.iter().zip(gamma).map(|(y, g)| y - g).collect();
        let v = lik.ln_likelihood(theta, &st.invert(&shifted));
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut z = s.z0.clone();
    let mut theta = s.transform.inverse(&z);
    let mut gamma = vec![0.0; d_s];
    let mut lp = ln_prior_z(prior, &s.transform, &z, &theta);
    let mut ll = loglik(&theta, &gamma);
    if !(lp + ll).is_finite() {
        return Err(NeuralError::NonFiniteInitial);
    }
    let mut factor = psd_factor(&s.cov)?;
    let mut rng = seed.rng();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let scale = 2.38f64.powi(2) / d_t as f64;
    let mut out = PosteriorChain {
        lambda: lambda.clone(),
        ..Default::default()
    };
    let mut accepted = 0usize;
    let total = config.mcmc.burn_in + config.mcmc.n_iter;

    for it in 0..total {
        let zp = sample_correlated(&mut rng, &z, &factor);
        let tp = s.transform.inverse(&zp);
        let lpp = ln_prior_z(prior, &s.transform, &zp, &tp);
        let mut acc = false;
        if lpp.is_finite() {
            let llp = loglik(&tp, &gamma);
            if rng.random::<f64>().ln() < llp + lpp - ll - lp {
                z = zp;
                theta = tp;
                lp = lpp;
                ll = llp;
                acc = true;
            }
        }
        if !config.fix_gamma {
            for i in 0..d_s {
                let mut trial = gamma.clone();
                let th = &theta;
                let log_f = |g: f64| {
                    trial[i] = g;
                    loglik(th, &trial) + laplace_ln(g, lambda[i])
                };
                let (g, _) = slice_sample(gamma[i], log_f, lambda[i], 50, &mut rng);
                gamma[i] = g;
            }
            ll = loglik(&theta, &gamma);
        }
        if it < config.mcmc.burn_in {
            history.push(z.clone());
            let n = history.len();
            if n >= 10 * d_t.max(2) && n % 50 == 0 {
                let (_, cov) = mean_and_cov(&history);
                let mut c = cov * scale;
                for k in 0..d_t {
                    c[(k, k)] += 1e-10;
                }
                if let Ok(f) = psd_factor(&c) {
                    if f.iter().any(|v| *v != 0.0) {
                        factor = f;
                    }
                }
            }
        } else {
            out.theta.push(theta.clone());
            out.gamma.push(if config.fix_gamma { Vec::new() } else { gamma.clone() });
            out.log_target.push(lp + ll);
            accepted += usize::from(acc);
        }
    }
    out.acceptance_rate = accepted as f64 / config.mcmc.n_iter as f64;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SnleResult {
    pub estimator: ConditionalDensityEstimator,
    pub chain: PosteriorChain,
    pub reports: Vec<RoundReport>,
    pub data: TrainingSet,
}

/// Sequential NLE: round 1 simulates from the prior, later rounds from the
/// current MCMC posterior; the estimator is retrained on all pairs each
/// round. With `robust` set, every chain is the RSNL joint chain.
pub fn run_snle(
    model: &dyn SummaryModel,
    observed: &[f64],
    training: &TrainingConfig,
    robust: Option<&RsnlConfig>,
    mcmc: &McmcConfig,
    seed: SeedStream,
    max_retries: usize,
) -> Result<SnleResult, NeuralError> {
    training.validate()?;
    if observed.len() != model.summary_dim() {
        return Err(NeuralError::Config(format!(
            "observed summary has {} entries, model produces {}",
            observed.len(),
            model.summary_dim()
        )));
    }
    let prior = model.prior();
    let n = training.sims_per_round;
    let mut data = TrainingSet::default();
    let mut reports = Vec::new();
    let mut state: Option<(ConditionalDensityEstimator, PosteriorChain)> = None;

    for round in 1..=training.rounds {
        let rseed = seed.child(round as u64);
        let proposals: Vec<Vec<f64>> = match &state {
            None => {
                let mut rng = rseed.at(0).rng();
                (0..n).map(|_| prior.sample(&mut rng).into_inner()).collect()
            }
            Some((_, chain)) => {
                let len = chain.theta.len();
                (0..n).map(|i| chain.theta[i * len / n].clone()).collect()
            }
        };
        let sims: Vec<(Vec<f64>, u64)> = proposals
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                simulate_valid(model, t, rseed.child(1).child(i as u64), max_retries).map(|(s, c)| (s.into_inner(), c))
            })
            .collect::<Result<_, _>>()?;
        let calls = sims.iter().map(|(_, c)| c).sum();
        data.thetas.extend(proposals);
        data.xs.extend(sims.into_iter().map(|(s, _)| s));
        let (est, report) = train_cnde(&data.thetas, &data.xs, Direction::Likelihood, training, rseed.child(2))?;
        let chain = match robust {
            Some(r) => {
                let cfg = RsnlConfig {
                    mcmc: mcmc.clone(),
                    ..r.clone()
                };
                rsnl_posterior_sample(&est, prior, observed, &cfg, rseed.child(3))?
            }
            None => nle_posterior_sample(&est, prior, observed, mcmc, rseed.child(3))?,
        };
        log::info!("snle round {round}: {} pairs, acceptance {:.3}", data.len(), chain.acceptance_rate);
        reports.push(RoundReport {
            round,
            threshold: None,
            retained: 1.0,
            n_train: data.len(),
            simulations: calls,
            training: report,
        });
        state = Some((est, chain));
    }
    let (estimator, chain) = state.expect("at least one round");
    Ok(SnleResult {
        estimator,
        chain,
        reports,
        data,
    })
}
