//! Bayesian synthetic likelihood.
//!
//! The summary likelihood at `theta` is approximated by a Gaussian whose mean
//! and covariance are estimated from `m` simulations. The chain is a
//! pseudo-marginal random walk in the unconstrained space of
//! [`BoundTransform`]; the robust variants add a per-summary adjustment
//! vector `gamma` with independent Laplace priors, updated by slice sampling.

use std::io::{self, Write};

use cellsbi_core::linalg::{gaussian_ln_pdf_chol, jittered_cholesky, mean_and_cov, psd_factor, sample_correlated};
use cellsbi_core::simulator::simulate_valid;
use cellsbi_core::{BoundTransform, CoreError, Marginal, SeedStream, SimError, SummaryModel};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::{fmt_f64, indexed, write_header, write_row};
use crate::mcmc::{prior_scaled_proposal, slice_sample};

#[derive(Debug, thiserror::Error)]
pub enum BslError {
    #[error("invalid BSL configuration: {0}")]
    Config(String),
    #[error("observed summary has {observed} entries, model produces {model}")]
    ObservedDimension { observed: usize, model: usize },
    #[error("synthetic likelihood covariance is singular")]
    Singular,
    #[error("log synthetic likelihood is not finite at the initial point")]
    NonFiniteInitial,
    #[error("initial parameter is outside the prior support")]
    InitialOutsideSupport,
    #[error("every candidate m produced a singular covariance")]
    AllSingular,
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Relative diagonal jitter applied before factorising `sigma_hat`.
pub const SL_JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SyntheticLikelihoodEstimate {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub log_density_at_observed: f64,
    chol: DMatrix<f64>,
}

impl SyntheticLikelihoodEstimate {
    /// Builds the estimate from simulated summaries (rows).
    pub fn from_summaries<R: AsRef<[f64]>>(rows: &[R], observed: &[f64]) -> Result<Self, BslError> {
        let (mu, sigma) = mean_and_cov(rows);
        let chol = jittered_cholesky(&sigma, SL_JITTER).map_err(|_| BslError::Singular)?;
        let mu_hat: Vec<f64> = mu.iter().copied().collect();
        let log_density_at_observed = gaussian_ln_pdf_chol(observed, &mu_hat, &chol);
        Ok(Self {
            mu_hat,
            sigma_hat: sigma,
            log_density_at_observed,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    /// Log density of `observed` under the estimate with an optional adjustment.
    pub fn adjusted_log_density(&self, observed: &[f64], adj: Option<&AdjustmentVector>) -> f64 {
        match adj {
            None => self.log_density_at_observed,
            Some(a) if a.gamma.iter().all(|g| *g == 0.0) => self.log_density_at_observed,
            Some(a) => match a.mode {
                AdjustMode::Mean => {
                    let (phi, _) = mean_adjusted_mean(&self.mu_hat, &self.sigma_hat, &a.gamma);
                    gaussian_ln_pdf_chol(observed, &phi, &self.chol)
                }
                AdjustMode::Variance => {
                    let v = variance_adjusted_cov(&self.sigma_hat, &a.gamma);
                    match jittered_cholesky(&v, SL_JITTER) {
                        Ok(l) => gaussian_ln_pdf_chol(observed, &self.mu_hat, &l),
                        Err(_) => f64::NEG_INFINITY,
                    }
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustMode {
    Mean,
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentVector {
    pub gamma: Vec<f64>,
    pub mode: AdjustMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Robust {
    #[default]
    None,
    MeanAdjust,
    VarianceAdjust,
}

impl Robust {
    fn mode(self) -> Option<AdjustMode> {
        match self {
            Robust::None => None,
            Robust::MeanAdjust => Some(AdjustMode::Mean),
            Robust::VarianceAdjust => Some(AdjustMode::Variance),
        }
    }
}

/// `phi = mu + sqrt(diag(sigma)) * gamma`. The flag reports whether any
/// negative diagonal entry had to be clamped to zero.
pub fn mean_adjusted_mean(mu: &[f64], sigma: &DMatrix<f64>, gamma: &[f64]) -> (Vec<f64>, bool) {
    assert_eq!(mu.len(), gamma.len());
    assert_eq!(sigma.nrows(), mu.len());
    let mut clamped = false;
    let phi = mu
        .iter()
        .zip(gamma)
        .enumerate()
        .map(|(i, (m, g))| {
            let v = sigma[(i, i)];
            if v < 0.0 {
                clamped = true;
            }
            m + v.max(0.0).sqrt() * g
        })
        .collect();
    if clamped {
        log::warn!("negative variance clamped to zero in mean adjustment");
    }
    (phi, clamped)
}

/// `V = sigma + diag(sigma_ii * gamma_i^2)`.
pub fn variance_adjusted_cov(sigma: &DMatrix<f64>, gamma: &[f64]) -> DMatrix<f64> {
    assert_eq!(sigma.nrows(), gamma.len());
    let mut v = sigma.clone();
    for (i, g) in gamma.iter().enumerate() {
        v[(i, i)] += sigma[(i, i)] * g * g;
    }
    v
}

/// Simulates `m` valid summaries at `theta` in parallel and forms the estimate.
///
/// Simulation `j` uses `seed.child(j)`, with retries on invalid draws.
/// Returns the estimate and the number of simulator calls.
pub fn estimate_synthetic_loglik(
    model: &dyn SummaryModel,
    theta: &[f64],
    m: usize,
    observed: &[f64],
    seed: SeedStream,
    max_retries: usize,
) -> Result<(SyntheticLikelihoodEstimate, u64), BslError> {
    let d = model.summary_dim();
    if observed.len() != d {
        return Err(BslError::ObservedDimension {
            observed: observed.len(),
            model: d,
        });
    }
    if m < d + 2 {
        return Err(BslError::Config(format!("m = {m} must be at least d + 2 = {}", d + 2)));
    }
    let sims: Vec<(Vec<f64>, u64)> = (0..m)
        .into_par_iter()
        .map(|j| simulate_valid(model, theta, seed.child(j as u64), max_retries).map(|(s, c)| (s.into_inner(), c)))
        .collect::<Result<_, _>>()?;
    let calls = sims.iter().map(|(_, c)| c).sum();
    let rows: Vec<Vec<f64>> = sims.into_iter().map(|(s, _)| s).collect();
    Ok((SyntheticLikelihoodEstimate::from_summaries(&rows, observed)?, calls))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BslConfig {
    /// Number of retained iterations.
    pub n_iter: usize,
    /// Adaptive burn-in iterations, discarded.
    pub burn_in: usize,
    pub m: usize,
    /// Proposal covariance in the unconstrained space; a diagonal default is
    /// derived from the prior when absent.
    pub proposal_cov: Option<Vec<Vec<f64>>>,
    pub gamma_prior_scale: f64,
    /// Starting parameter; defaults to the prior mean.
    pub theta0: Option<Vec<f64>>,
    /// Re-estimate the likelihood at the current point every iteration.
    pub refresh_current: bool,
    pub max_retries: usize,
    /// Re-draws of the initial estimate when its covariance is singular.
    pub max_singular_retries: usize,
}

impl Default for BslConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 0,
            m: 50,
            proposal_cov: None,
            gamma_prior_scale: 0.5,
            theta0: None,
            refresh_current: false,
            max_retries: cellsbi_core::DEFAULT_MAX_RETRIES,
            max_singular_retries: 10,
        }
    }
}

impl BslConfig {
    pub fn validate(&self, summary_dim: usize, param_dim: usize) -> Result<(), BslError> {
        if self.n_iter < 1 {
            return Err(BslError::Config("n_iter must be at least 1".into()));
        }
        if self.m < summary_dim + 2 {
            return Err(BslError::Config(format!(
                "m = {} must be at least d + 2 = {}",
                self.m,
                summary_dim + 2
            )));
        }
        if !(self.gamma_prior_scale.is_finite() && self.gamma_prior_scale > 0.0) {
            return Err(BslError::Config("gamma_prior_scale must be positive".into()));
        }
        if let Some(c) = &self.proposal_cov {
            if c.len() != param_dim || c.iter().any(|r| r.len() != param_dim) {
                return Err(BslError::Config(format!("proposal_cov must be {param_dim}x{param_dim}")));
            }
        }
        if let Some(t) = &self.theta0 {
            if t.len() != param_dim {
                return Err(BslError::Config(format!("theta0 must have {param_dim} entries")));
            }
        }
        Ok(())
    }

    pub fn proposal_matrix(&self) -> Option<DMatrix<f64>> {
        self.proposal_cov.as_ref().map(|rows| {
            let d = rows.len();
            DMatrix::from_fn(d, d, |i, j| rows[i][j])
        })
    }
}

/// Covariance of a parameter sample in the unconstrained space, scaled by
/// `2.38^2 / d`. Used to seed the chain from an SMC ABC population.
pub fn proposal_from_population(thetas: &[Vec<f64>], transform: &BoundTransform) -> Result<Vec<Vec<f64>>, BslError> {
    if thetas.len() < 2 {
        return Err(BslError::Config("need at least two parameter vectors".into()));
    }
    let z: Vec<Vec<f64>> = thetas
        .iter()
        .map(|t| transform.forward_clamped(t))
        .collect::<Result<_, _>>()?;
    let (_, cov) = mean_and_cov(&z);
    let d = cov.nrows();
    let s = 2.38f64.powi(2) / d as f64;
    Ok((0..d).map(|i| (0..d).map(|j| cov[(i, j)] * s).collect()).collect())
}

#[derive(Debug, Clone, Default)]
pub struct BslChain {
    pub theta: Vec<Vec<f64>>,
    /// Empty rows when no adjustment is sampled.
    pub gamma: Vec<Vec<f64>>,
    pub loglik: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Acceptance rate of the theta updates over retained iterations.
    pub acceptance_rate: f64,
    pub total_simulations: u64,
}

impl BslChain {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta_column(&self, k: usize) -> Vec<f64> {
        self.theta.iter().map(|t| t[k]).collect()
    }

    pub fn gamma_column(&self, k: usize) -> Vec<f64> {
        self.gamma.iter().map(|g| g[k]).collect()
    }
}

fn laplace_ln(g: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - g.abs() / scale
}

struct ChainState {
    z: Vec<f64>,
    theta: Vec<f64>,
    est: SyntheticLikelihoodEstimate,
    gamma: Option<AdjustmentVector>,
    log_prior_z: f64,
}

impl ChainState {
    fn loglik(&self, observed: &[f64]) -> f64 {
        self.est.adjusted_log_density(observed, self.gamma.as_ref())
    }
}

/// Runs the (robust) BSL chain. Iteration `t` estimates with `seed.child(t)`.
pub fn run_bsl_mcmc(
    model: &dyn SummaryModel,
    observed: &[f64],
    config: &BslConfig,
    robust: Robust,
    seed: SeedStream,
) -> Result<BslChain, BslError> {
    let d_s = model.summary_dim();
    let d_t = model.param_dim();
    if observed.len() != d_s {
        return Err(BslError::ObservedDimension {
            observed: observed.len(),
            model: d_s,
        });
    }
    config.validate(d_s, d_t)?;
    let transform = BoundTransform::from_prior(model.prior());
    let prior = model.prior();
    let log_prior_z = |z: &[f64], theta: &[f64]| -> f64 {
        match prior.ln_pdf(theta) {
            Ok(lp) if lp.is_finite() => lp + transform.inverse_log_jacobian(z),
            _ => f64::NEG_INFINITY,
        }
    };

    let theta0 = match &config.theta0 {
        Some(t) => t.clone(),
        None => prior.marginals().iter().map(Marginal::mean).collect(),
    };
    if !prior.contains(&theta0) {
        return Err(BslError::InitialOutsideSupport);
    }
    let z0 = transform.forward_clamped(&theta0)?;
    let mut factor = match config.proposal_matrix() {
        Some(c) => psd_factor(&c)?,
        None => psd_factor(&prior_scaled_proposal(prior, 0.01, seed.child(u64::MAX)))?,
    };

    let mut sims = 0u64;
    let mut est0 = None;
    for attempt in 0..=config.max_singular_retries {
        match estimate_synthetic_loglik(model, &theta0, config.m, observed, seed.child(0).child(attempt as u64), config.max_retries) {
            Ok((e, c)) => {
                sims += c;
                est0 = Some(e);
                break;
            }
            Err(BslError::Singular) => sims += config.m as u64,
            Err(e) => return Err(e),
        }
    }
    let est0 = est0.ok_or(BslError::Singular)?;
    let mode = robust.mode();
    let mut state = ChainState {
        log_prior_z: log_prior_z(&z0, &theta0),
        z: z0,
        theta: theta0,
        est: est0,
        gamma: mode.map(|mode| AdjustmentVector {
            gamma: vec![0.0; d_s],
            mode,
        }),
    };
    if !state.loglik(observed).is_finite() || !state.log_prior_z.is_finite() {
        return Err(BslError::NonFiniteInitial);
    }

    let total = config.burn_in + config.n_iter;
    let mut chain = BslChain::default();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let scale = 2.38f64.powi(2) / d_t as f64;
    let gscale = config.gamma_prior_scale;

    for t in 1..=total {
        let it_seed = seed.child(t as u64);
        let mut rng = it_seed.at(1).rng();

        if config.refresh_current {
            let (e, c) = estimate_with_retries(model, &state.theta, config, observed, it_seed.at(2))?;
            sims += c;
            state.est = e;
        }

        let z_prop = sample_correlated(&mut rng, &state.z, &factor);
        let theta_prop = transform.inverse(&z_prop);
        let lp_prop = log_prior_z(&z_prop, &theta_prop);
        let mut accepted = false;
        if lp_prop.is_finite() {
            let (est_prop, c) = estimate_with_retries(model, &theta_prop, config, observed, it_seed.at(0))?;
            sims += c;
            let ll_prop = est_prop.adjusted_log_density(observed, state.gamma.as_ref());
            let log_ratio = ll_prop + lp_prop - state.loglik(observed) - state.log_prior_z;
            if ll_prop.is_finite() && rng.random::<f64>().ln() < log_ratio {
                state.z = z_prop;
                state.theta = theta_prop;
                state.est = est_prop;
                state.log_prior_z = lp_prop;
                accepted = true;
            }
        }

        if let Some(adj) = state.gamma.as_mut() {
            for i in 0..d_s {
                let est = &state.est;
                let mode = adj.mode;
                let mut trial = adj.gamma.clone();
                let log_f = |g: f64| {
                    trial[i] = g;
                    let a = AdjustmentVector { gamma: trial.clone(), mode };
                    est.adjusted_log_density(observed, Some(&a)) + laplace_ln(g, gscale)
                };
                let (g_new, _) = slice_sample(adj.gamma[i], log_f, gscale, 50, &mut rng);
                adj.gamma[i] = g_new;
            }
        }

        if t <= config.burn_in {
            history.push(state.z.clone());
            let n = history.len();
            if n >= 10 * d_t.max(2) && n % 50 == 0 {
                let (_, cov) = mean_and_cov(&history);
                let mut c = cov * scale;
                for i in 0..d_t {
                    c[(i, i)] += 1e-10;
                }
                if let Ok(f) = psd_factor(&c) {
                    if f.iter().any(|v| *v != 0.0) {
                        factor = f;
                    }
                }
            }
        } else {
            chain.theta.push(state.theta.clone());
            chain.gamma.push(state.gamma.as_ref().map(|a| a.gamma.clone()).unwrap_or_default());
            chain.loglik.push(state.loglik(observed));
            chain.accepted.push(accepted);
        }
    }
    chain.acceptance_rate = chain.accepted.iter().filter(|a| **a).count() as f64 / chain.accepted.len() as f64;
    chain.total_simulations = sims;
    Ok(chain)
}

fn estimate_with_retries(
    model: &dyn SummaryModel,
    theta: &[f64],
    config: &BslConfig,
    observed: &[f64],
    seed: SeedStream,
) -> Result<(SyntheticLikelihoodEstimate, u64), BslError> {
    let mut sims = 0;
    for attempt in 0..=config.max_singular_retries {
        let s = if attempt == 0 { seed } else { seed.child(attempt as u64) };
        match estimate_synthetic_loglik(model, theta, config.m, observed, s, config.max_retries) {
            Ok((e, c)) => return Ok((e, sims + c)),
            Err(BslError::Singular) => sims += config.m as u64,
            Err(e) => return Err(e),
        }
    }
    Err(BslError::Singular)
}

pub fn write_chain_csv<W: Write>(w: &mut W, chain: &BslChain) -> io::Result<()> {
    let d_t = chain.theta.first().map_or(0, Vec::len);
    let d_g = chain.gamma.first().map_or(0, Vec::len);
    let mut cols = vec!["iter".to_owned()];
    cols.extend(indexed("theta_", d_t));
    cols.extend(indexed("gamma_", d_g));
    cols.push("loglik".into());
    cols.push("accepted".into());
    write_header(w, &cols)?;
    for i in 0..chain.len() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(chain.theta[i].iter().map(|v| fmt_f64(*v)));
        row.extend(chain.gamma[i].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(chain.loglik[i]));
        row.push(u8::from(chain.accepted[i]).to_string());
        write_row(w, &row)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MRow {
    pub m: usize,
    /// Standard deviation of the log synthetic likelihood; NaN when fewer
    /// than two repeats produced a usable covariance.
    pub std_loglik: f64,
    pub n_valid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MTuning {
    pub selected: usize,
    pub table: Vec<MRow>,
    /// Set when no candidate landed in `[1, 2]`.
    pub warning: bool,
}

/// Measures std(log-SL) at `theta` for each candidate `m` over `reps`
/// independent estimates and picks the smallest `m` with std in `[1, 2]`.
pub fn tune_m(
    model: &dyn SummaryModel,
    theta: &[f64],
    observed: &[f64],
    candidates: &[usize],
    reps: usize,
    seed: SeedStream,
    max_retries: usize,
) -> Result<MTuning, BslError> {
    if candidates.is_empty() || reps < 2 {
        return Err(BslError::Config("need at least one candidate and two repeats".into()));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for (ci, &m) in candidates.iter().enumerate() {
        let cseed = seed.child(ci as u64);
        let mut vals = Vec::with_capacity(reps);
        for r in 0..reps {
            match estimate_synthetic_loglik(model, theta, m, observed, cseed.child(r as u64), max_retries) {
                Ok((e, _)) if e.log_density_at_observed.is_finite() => vals.push(e.log_density_at_observed),
                Ok(_) | Err(BslError::Singular) => {}
                Err(e) => return Err(e),
            }
        }
        let std_loglik = if vals.len() >= 2 {
            cellsbi_core::stats::std_dev(&vals)
        } else {
            f64::NAN
        };
        table.push(MRow {
            m,
            std_loglik,
            n_valid: vals.len(),
        });
    }
    let usable: Vec<&MRow> = table.iter().filter(|r| r.std_loglik.is_finite()).collect();
    if usable.is_empty() {
        return Err(BslError::AllSingular);
    }
    let in_band = usable
        .iter()
        .filter(|r| (1.0..=2.0).contains(&r.std_loglik))
        .min_by_key(|r| r.m);
    let (selected, warning) = match in_band {
        Some(r) => (r.m, false),
        None => {
            let best = usable
                .iter()
                .min_by(|a, b| (a.std_loglik - 1.5).abs().total_cmp(&(b.std_loglik - 1.5).abs()))
                .expect("non-empty");
            log::warn!("no candidate m gave std(log-SL) in [1, 2]; using m = {}", best.m);
            (best.m, true)
        }
    };
    Ok(MTuning {
        selected,
        table,
        warning,
    })
}

pub fn write_m_table_csv<W: Write>(w: &mut W, tuning: &MTuning) -> io::Result<()> {
    write_header(w, &["m".into(), "std_loglik".into(), "n_valid".into(), "selected".into()])?;
    for r in &tuning.table {
        write_row(
            w,
            &[
                r.m.to_string(),
                fmt_f64(r.std_loglik),
                r.n_valid.to_string(),
                u8::from(r.m == tuning.selected).to_string(),
            ],
        )?;
    }
    Ok(())
}
