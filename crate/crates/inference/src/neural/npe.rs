//! Neural posterior estimation, single round and truncated sequential.

use cellsbi_core::simulator::simulate_valid;
use cellsbi_core::{stats, Prior, SeedStream, SummaryModel};
use rayon::prelude::*;

use super::estimator::{train_cnde, ConditionalDensityEstimator, Direction, TrainingConfig, TrainingReport};
use super::NeuralError;

/// Fraction of rejected draws above which sampling is abandoned.
pub const MAX_LEAKAGE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct NpeSamples {
    pub draws: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    /// `rejected / (rejected + accepted)`.
    pub leakage: f64,
}

fn check_direction(est: &ConditionalDensityEstimator, expected: Direction) -> Result<(), NeuralError> {
    if est.direction != expected {
        return Err(NeuralError::WrongDirection {
            expected,
            found: est.direction,
        });
    }
    Ok(())
}

/// Draws `m` samples from the learned posterior at `observed`, rejecting
/// draws outside the prior support.
pub fn npe_sample(
    est: &ConditionalDensityEstimator,
    prior: &Prior,
    observed: &[f64],
    m: usize,
    seed: SeedStream,
) -> Result<NpeSamples, NeuralError> {
    check_direction(est, Direction::Posterior)?;
    let mix = est.mixture(observed);
    let mut rng = seed.rng();
    let mut out = NpeSamples {
        draws: Vec::with_capacity(m),
        accepted: 0,
        rejected: 0,
        leakage: 0.0,
    };
    let cap = m.saturating_mul(1000).max(10_000);
    while out.accepted < m {
        let theta = est.target.invert(&mix.sample(&mut rng));
        if prior.contains(&theta) {
            out.draws.push(theta);
            out.accepted += 1;
        } else {
            out.rejected += 1;
        }
        let total = out.accepted + out.rejected;
        let frac = out.rejected as f64 / total as f64;
        if (total >= 1000 && frac > MAX_LEAKAGE) || total >= cap {
            return Err(NeuralError::Leakage { fraction: frac });
        }
    }
    out.leakage = out.rejected as f64 / (out.accepted + out.rejected) as f64;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsnpeConfig {
    pub training: TrainingConfig,
    /// Quantile of `log q(theta | y)` over draws from `q` that bounds the region.
    pub truncation_quantile: f64,
    pub threshold_draws: usize,
    pub max_retries: usize,
}

impl Default for TsnpeConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            truncation_quantile: 1e-3,
            threshold_draws: 10_000,
            max_retries: cellsbi_core::DEFAULT_MAX_RETRIES,
        }
    }
}

/// Accumulated simulations across rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub thetas: Vec<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// `None` in the first round, where proposals come from the prior.
    pub threshold: Option<f64>,
    /// Fraction of prior draws inside the truncation region.
    pub retained: f64,
    pub n_train: usize,
    pub simulations: u64,
    pub training: TrainingReport,
}

/// `quantile` of `log_q` over `draws`, normally samples of the density
/// itself so that the region `{log_q >= threshold}` holds `1 - quantile` of
/// its mass.
pub fn truncation_threshold<F>(log_q: F, draws: &[Vec<f64>], quantile: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut vals: Vec<f64> = draws
        .iter()
        .map(|t| {
            let v = log_q(t);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    if vals.iter().all(|v| v.is_finite()) {
        stats::quantile_sorted(&vals, quantile)
    } else {
        vals[(quantile * (vals.len() - 1) as f64).floor() as usize]
    }
}

/// Rejection-samples `n` prior draws with `log_q >= threshold`.
/// Returns the draws and the retained fraction.
pub fn sample_truncated<F>(
    log_q: F,
    threshold: f64,
    prior: &Prior,
    n: usize,
    seed: SeedStream,
) -> Result<(Vec<Vec<f64>>, f64), NeuralError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(n);
    let mut tried = 0usize;
    let cap = n.saturating_mul(10_000).max(100_000);
    while out.len() < n {
        if tried >= cap {
            return Err(NeuralError::EmptyTruncation);
        }
        tried += 1;
        let t = prior.sample(&mut rng).into_inner();
        if log_q(&t) >= threshold {
            out.push(t);
        }
    }
    Ok((out, n as f64 / tried as f64))
}

fn simulate_batch(
    model: &dyn SummaryModel,
    thetas: Vec<Vec<f64>>,
    seed: SeedStream,
    max_retries: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, u64), NeuralError> {
    let sims: Vec<(Vec<f64>, u64)> = thetas
        .par_iter()
        .enumerate()
        .map(|(i, t)| simulate_valid(model, t, seed.child(i as u64), max_retries).map(|(s, c)| (s.into_inner(), c)))
        .collect::<Result<_, _>>()?;
    let calls = sims.iter().map(|(_, c)| c).sum();
    let xs = sims.into_iter().map(|(s, _)| s).collect();
    Ok((thetas, xs, calls))
}

/// One truncated round: propose from the prior restricted to the
/// high-density region of `prev` (or the plain prior), simulate, append to
/// `data`, and retrain on everything collected so far.
pub fn tsnpe_round(
    prev: Option<&ConditionalDensityEstimator>,
    model: &dyn SummaryModel,
    observed: &[f64],
    data: &mut TrainingSet,
    config: &TsnpeConfig,
    round: usize,
    seed: SeedStream,
) -> Result<(ConditionalDensityEstimator, RoundReport), NeuralError> {
    let prior = model.prior();
    let n = config.training.sims_per_round;
    let rseed = seed.child(round as u64);
    let (proposals, threshold, retained) = match prev {
        None => {
            let mut rng = rseed.at(0).rng();
            let p: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(&mut rng).into_inner()).collect();
            (p, None, 1.0)
        }
        Some(est) => {
            check_direction(est, Direction::Posterior)?;
            let mix = est.mixture(observed);
            let log_q = |t: &[f64]| mix.ln_pdf(&est.target.apply(t));
            let reference = npe_sample(est, prior, observed, config.threshold_draws, rseed.at(1))?;
            let thr = truncation_threshold(log_q, &reference.draws, config.truncation_quantile);
            if thr == f64::INFINITY || thr.is_nan() {
                return Err(NeuralError::EmptyTruncation);
            }
            let (p, retained) = sample_truncated(log_q, thr, prior, n, rseed.at(0))?;
            (p, Some(thr), retained)
        }
    };
    let (thetas, xs, sims) = simulate_batch(model, proposals, rseed.child(1), config.max_retries)?;
    data.thetas.extend(thetas);
    data.xs.extend(xs);
    let (est, training) = train_cnde(&data.thetas, &data.xs, Direction::Posterior, &config.training, rseed.child(2))?;
    Ok((
        est,
        RoundReport {
            round,
            threshold,
            retained,
            n_train: data.len(),
            simulations: sims,
            training,
        },
    ))
}

/// Runs `config.training.rounds` truncated rounds.
pub fn run_tsnpe(
    model: &dyn SummaryModel,
    observed: &[f64],
    config: &TsnpeConfig,
    seed: SeedStream,
) -> Result<(ConditionalDensityEstimator, Vec<RoundReport>, TrainingSet), NeuralError> {
    config.training.validate()?;
    if !(config.truncation_quantile > 0.0 && config.truncation_quantile < 1.0) || config.threshold_draws < 2 {
        return Err(NeuralError::Config(
            "truncation_quantile must lie in (0, 1) with at least two threshold draws".into(),
        ));
    }
    if observed.len() != model.summary_dim() {
        return Err(NeuralError::Config(format!(
            "observed summary has {} entries, model produces {}",
            observed.len(),
            model.summary_dim()
        )));
    }
    let mut data = TrainingSet::default();
    let mut reports = Vec::new();
    let mut est: Option<ConditionalDensityEstimator> = None;
    for round in 1..=config.training.rounds {
        let (e, r) = tsnpe_round(est.as_ref(), model, observed, &mut data, config, round, seed)?;
        log::info!("tsnpe round {round}: {} pairs, retained {:.3}", r.n_train, r.retained);
        reports.push(r);
        est = Some(e);
    }
    Ok((est.expect("at least one round"), reports, data))
}

/// Single-round NPE with `n_sims` prior simulations.
pub fn run_npe(
    model: &dyn SummaryModel,
    observed: &[f64],
    training: &TrainingConfig,
    n_sims: usize,
    seed: SeedStream,
) -> Result<(ConditionalDensityEstimator, RoundReport), NeuralError> {
    let config = TsnpeConfig {
        training: TrainingConfig {
            rounds: 1,
            sims_per_round: n_sims,
            ..training.clone()
        },
        ..Default::default()
    };
    let (est, mut reports, _) = run_tsnpe(model, observed, &config, seed)?;
    Ok((est, reports.remove(0)))
}
