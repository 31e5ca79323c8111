//! Adaptive sequential Monte Carlo ABC.
//!
//! Each iteration sorts the population by discrepancy, drops the worst
//! fraction `a`, sets the new tolerance to the largest surviving discrepancy,
//! refills the dropped slots by uniform resampling from the survivors and
//! rejuvenates the copies with MCMC-ABC moves in the unbounded parameter
//! space. The number of moves per particle follows
//! `R_t = ceil(ln c / ln(1 - p_acc))`, where `p_acc` is first estimated from a
//! single trial move per particle and then refined over all moves.
//!
//! Every proposal is simulated, so the reported simulation count is
//! `N + sum_t proposals_t`.

use std::io::{self, Write};

use cellsbi_core::linalg::{mean_and_cov, psd_factor, sample_correlated};
use cellsbi_core::{discrepancy, BoundTransform, Metric, SeedStream, SimError, SummaryModel};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csv::{fmt_f64, indexed, write_header, write_row};

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("invalid SMC configuration: {0}")]
    Config(String),
    #[error("observed data has dimension {observed}, model output has {model}")]
    ObservedDimension { observed: usize, model: usize },
    #[error("simulation budget {budget} is smaller than the initial population {needed}")]
    BudgetTooSmall { budget: u64, needed: u64 },
    #[error("proposal covariance is not positive semidefinite")]
    Covariance,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Fraction of the population discarded each iteration.
    pub a: f64,
    /// Probability that a particle is never moved over `R_t` steps.
    pub c: f64,
    pub epsilon_target: Option<f64>,
    pub min_acceptance: f64,
    pub max_total_simulations: u64,
    pub max_mcmc_steps: usize,
    pub metric: Metric,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            a: 0.5,
            c: 0.01,
            epsilon_target: None,
            min_acceptance: 0.01,
            max_total_simulations: 10_000_000,
            max_mcmc_steps: 500,
            metric: Metric::Euclidean,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<(), SmcError> {
        let bad = |m: String| Err(SmcError::Config(m));
        if self.n_particles < 2 {
            return bad(format!("n_particles must be >= 2, got {}", self.n_particles));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad(format!("a must lie in (0, 1), got {}", self.a));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad(format!("c must lie in (0, 1), got {}", self.c));
        }
        if !(0.0..=1.0).contains(&self.min_acceptance) {
            return bad(format!("min_acceptance must lie in [0, 1], got {}", self.min_acceptance));
        }
        if let Some(e) = self.epsilon_target {
            if !(e >= 0.0) {
                return bad(format!("epsilon_target must be non-negative, got {e}"));
            }
        }
        if self.max_total_simulations == 0 {
            return bad("max_total_simulations must be positive".into());
        }
        if self.max_mcmc_steps == 0 {
            return bad("max_mcmc_steps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: Vec<f64>,
    /// Simulated summary; empty when the simulation was non-finite.
    pub summary: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub epsilon: f64,
    pub p_acc: f64,
    pub r_t: usize,
    pub cum_sims: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    LowAcceptance,
    TargetReached,
    BudgetExhausted,
    Stagnation,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SmcTrace {
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct SmcResult {
    pub population: Vec<Particle>,
    pub trace: SmcTrace,
    pub epsilon: f64,
    pub termination: Termination,
    pub total_simulations: u64,
}

/// Outcome of ranking a population by discrepancy.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub epsilon: f64,
    /// Indices of survivors, best first.
    pub keep: Vec<usize>,
    /// Indices marked for replacement.
    pub discard: Vec<usize>,
    /// Every discrepancy is identical; the schedule cannot progress.
    pub stagnant: bool,
}

fn survivor_count(n: usize, a: f64) -> usize {
    // guard against (1 - a) * n landing a hair above an integer
    let k = ((1.0 - a) * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Tolerance from discarding the `a` fraction with the largest discrepancy:
/// the discrepancy of the `ceil((1 - a) N)`-th smallest particle. Ties are
/// broken by index so the split is deterministic.
pub fn adaptive_threshold(rhos: &[f64], a: f64) -> Threshold {
    let n = rhos.len();
    assert!(n > 0, "empty population");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| rhos[i].total_cmp(&rhos[j]).then(i.cmp(&j)));
    let k = survivor_count(n, a);
    let epsilon = rhos[order[k - 1]];
    let stagnant = rhos.iter().all(|&r| r == rhos[0]);
    let discard = order.split_off(k);
    Threshold {
        epsilon,
        keep: order,
        discard,
        stagnant,
    }
}

/// `ceil(ln c / ln(1 - p_acc))`, clamped to `[1, cap]`; `cap` when nothing was accepted.
pub fn compute_num_mcmc_steps(p_acc: f64, c: f64, cap: usize) -> usize {
    if !(p_acc > 0.0) {
        return cap;
    }
    if p_acc >= 1.0 {
        return 1;
    }
    let r = (c.ln() / (1.0 - p_acc).ln()).ceil();
    if r.is_finite() {
        (r as usize).clamp(1, cap)
    } else {
        cap
    }
}

struct MoveContext<'a> {
    model: &'a dyn SummaryModel,
    observed: &'a [f64],
    metric: &'a Metric,
    transform: &'a BoundTransform,
    factor: &'a DMatrix<f64>,
    epsilon: f64,
}

impl MoveContext<'_> {
    fn log_target(&self, theta: &[f64], z: &[f64]) -> f64 {
        let lp = self
            .model
            .prior()
            .ln_pdf(theta)
            .unwrap_or(f64::NEG_INFINITY);
        lp + self.transform.inverse_log_jacobian(z)
    }

    fn rho_of(&self, theta: &[f64], seed: SeedStream) -> Result<(Vec<f64>, f64), SimError> {
        match self.model.simulate_summary(theta, seed) {
            Ok(s) => {
                let rho = discrepancy(self.observed, &s, self.metric)
                    .map_err(|e| SimError::Failed(e.to_string()))?;
                Ok((s.into_inner(), rho))
            }
            Err(SimError::NonFiniteSummary { .. }) | Err(SimError::Degenerate(_)) => {
                Ok((Vec::new(), f64::INFINITY))
            }
            Err(e) => Err(e),
        }
    }

    /// Runs MCMC-ABC steps `first..first + steps` on one particle.
    /// Returns the number of accepted proposals.
    fn advance(&self, p: &mut Particle, base: SeedStream, first: usize, steps: usize) -> Result<usize, SimError> {
        let mut z = self
            .transform
            .forward_clamped(&p.theta)
            .map_err(|e| SimError::Failed(e.to_string()))?;
        let mut lt = self.log_target(&p.theta, &z);
        let mut accepted = 0;
        for step in first..first + steps {
            let mut rng = base.at(2 * step as u64).rng();
            let z_new = sample_correlated(&mut rng, &z, self.factor);
            let theta_new = if z_new == z {
                p.theta.clone()
            } else {
                self.transform.inverse(&z_new)
            };
            let lt_new = self.log_target(&theta_new, &z_new);
            let u: f64 = rng.random();
            let (summary, rho) = self.rho_of(&theta_new, base.at(2 * step as u64 + 1))?;
            if lt_new.is_finite() && u.ln() < lt_new - lt && rho <= self.epsilon {
                p.theta = theta_new;
                p.summary = summary;
                p.rho = rho;
                z = z_new;
                lt = lt_new;
                accepted += 1;
            }
        }
        Ok(accepted)
    }
}

/// `2 x` the empirical covariance of the given particles in transformed space.
pub fn proposal_covariance(particles: &[&Particle], transform: &BoundTransform) -> Result<DMatrix<f64>, SmcError> {
    let d = transform.dim();
    if particles.len() < 2 {
        return Ok(DMatrix::zeros(d, d));
    }
    let zs = particles
        .iter()
        .map(|p| transform.forward_clamped(&p.theta))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SmcError::Config(e.to_string()))?;
    let (_, cov) = mean_and_cov(&zs);
    Ok(cov * 2.0)
}

/// Refill every discarded slot with a uniform draw from the survivors, then
/// move each refilled particle by `r_t` MCMC-ABC steps at tolerance `epsilon`.
///
/// Returns the refreshed population, the measured acceptance rate, and the
/// number of simulations spent.
#[allow(clippy::too_many_arguments)]
pub fn resample_and_move(
    population: &[Particle],
    threshold: &Threshold,
    epsilon: f64,
    proposal_cov: &DMatrix<f64>,
    r_t: usize,
    model: &dyn SummaryModel,
    observed: &[f64],
    metric: &Metric,
    seed: SeedStream,
) -> Result<(Vec<Particle>, f64, u64), SmcError> {
    let transform = BoundTransform::from_prior(model.prior());
    let factor = psd_factor(proposal_cov).map_err(|_| SmcError::Covariance)?;
    let ctx = MoveContext {
        model,
        observed,
        metric,
        transform: &transform,
        factor: &factor,
        epsilon,
    };
    let mut pop = population.to_vec();
    let slots = resample_into(&mut pop, threshold, seed);
    let accepted = move_slots(&ctx, &mut pop, &slots, seed, 0, r_t)?;
    let proposals = (slots.len() * r_t) as u64;
    let p_acc = if proposals == 0 {
        1.0
    } else {
        accepted as f64 / proposals as f64
    };
    Ok((pop, p_acc, proposals))
}

fn resample_into(pop: &mut [Particle], threshold: &Threshold, seed: SeedStream) -> Vec<usize> {
    let mut rng = seed.at(0).rng();
    let keep = &threshold.keep;
    for &slot in &threshold.discard {
        let src = keep[rng.random_range(0..keep.len())];
        pop[slot] = pop[src].clone();
    }
    threshold.discard.clone()
}

fn move_slots(
    ctx: &MoveContext<'_>,
    pop: &mut [Particle],
    slots: &[usize],
    seed: SeedStream,
    first: usize,
    steps: usize,
) -> Result<usize, SimError> {
    if steps == 0 || slots.is_empty() {
        return Ok(0);
    }
    let moved: Vec<Result<(Particle, usize), SimError>> = slots
        .par_iter()
        .map(|&slot| {
            let mut p = pop[slot].clone();
            let acc = ctx.advance(&mut p, seed.child(slot as u64 + 1), first, steps)?;
            Ok((p, acc))
        })
        .collect();
    let mut accepted = 0;
    for (&slot, r) in slots.iter().zip(moved) {
        let (p, acc) = r?;
        pop[slot] = p;
        accepted += acc;
    }
    Ok(accepted)
}

pub fn run_smc_abc(
    model: &dyn SummaryModel,
    observed: &[f64],
    config: &SmcConfig,
    seed: SeedStream,
) -> Result<SmcResult, SmcError> {
    config.validate()?;
    if observed.len() != model.summary_dim() {
        return Err(SmcError::ObservedDimension {
            observed: observed.len(),
            model: model.summary_dim(),
        });
    }
    let n = config.n_particles;
    if config.max_total_simulations < n as u64 {
        return Err(SmcError::BudgetTooSmall {
            budget: config.max_total_simulations,
            needed: n as u64,
        });
    }
    let transform = BoundTransform::from_prior(model.prior());
    let init_seed = seed.child(0);

    let initial: Vec<Result<Particle, SimError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let base = init_seed.child(i as u64);
            let theta = model.prior().sample(&mut base.at(0).rng()).into_inner();
            let ctx_rho = match model.simulate_summary(&theta, base.at(1)) {
                Ok(s) => {
                    let rho = discrepancy(observed, &s, &config.metric)
                        .map_err(|e| SimError::Failed(e.to_string()))?;
                    (s.into_inner(), rho)
                }
                Err(SimError::NonFiniteSummary { .. }) | Err(SimError::Degenerate(_)) => {
                    (Vec::new(), f64::INFINITY)
                }
                Err(e) => return Err(e),
            };
            Ok(Particle {
                theta,
                summary: ctx_rho.0,
                rho: ctx_rho.1,
            })
        })
        .collect();
    let mut pop = initial.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut sims = n as u64;
    let mut trace = SmcTrace::default();
    let mut prev_eps = f64::INFINITY;
    let mut current_eps = f64::INFINITY;
    let budget = config.max_total_simulations;

    let termination = loop {
        let iter = trace.records.len() + 1;
        let rhos: Vec<f64> = pop.iter().map(|p| p.rho).collect();
        let mut th = adaptive_threshold(&rhos, config.a);
        let mut last = false;
        if let Some(target) = config.epsilon_target {
            if th.epsilon <= target {
                let (keep, discard): (Vec<usize>, Vec<usize>) = {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&i, &j| rhos[i].total_cmp(&rhos[j]).then(i.cmp(&j)));
                    order.into_iter().partition(|&i| rhos[i] <= target)
                };
                th = Threshold {
                    epsilon: target,
                    keep,
                    discard,
                    stagnant: false,
                };
                last = true;
            }
        }
        if last && th.discard.is_empty() {
            trace.records.push(IterationRecord {
                iter,
                epsilon: th.epsilon,
                p_acc: 1.0,
                r_t: 0,
                cum_sims: sims,
            });
            current_eps = th.epsilon;
            break Termination::TargetReached;
        }
        let progressed = iter == 1 || th.epsilon < prev_eps * (1.0 - 1e-12);
        if th.stagnant || !progressed {
            break Termination::Stagnation;
        }
        let n_move = th.discard.len() as u64;
        if sims + n_move > budget {
            break Termination::BudgetExhausted;
        }

        let survivors: Vec<&Particle> = th.keep.iter().map(|&i| &pop[i]).collect();
        let cov = proposal_covariance(&survivors, &transform)?;
        let factor = psd_factor(&cov).map_err(|_| SmcError::Covariance)?;
        let ctx = MoveContext {
            model,
            observed,
            metric: &config.metric,
            transform: &transform,
            factor: &factor,
            epsilon: th.epsilon,
        };
        let iter_seed = seed.child(iter as u64);
        let slots = resample_into(&mut pop, &th, iter_seed);

        let trial_acc = move_slots(&ctx, &mut pop, &slots, iter_seed, 0, 1)?;
        sims += n_move;
        let p_trial = trial_acc as f64 / n_move as f64;
        let r_t = compute_num_mcmc_steps(p_trial, config.c, config.max_mcmc_steps);
        let affordable = ((budget - sims) / n_move) as usize;
        let remaining = (r_t - 1).min(affordable);
        let rest_acc = move_slots(&ctx, &mut pop, &slots, iter_seed, 1, remaining)?;
        sims += n_move * remaining as u64;
        let steps_done = 1 + remaining;
        let p_acc = (trial_acc + rest_acc) as f64 / (n_move as f64 * steps_done as f64);

        trace.records.push(IterationRecord {
            iter,
            epsilon: th.epsilon,
            p_acc,
            r_t: steps_done,
            cum_sims: sims,
        });
        prev_eps = th.epsilon;
        current_eps = th.epsilon;
        log::debug!("smc iter {iter}: eps {} p_acc {p_acc:.4} R {steps_done} sims {sims}", th.epsilon);

        if last {
            break Termination::TargetReached;
        }
        if remaining < r_t - 1 {
            break Termination::BudgetExhausted;
        }
        if p_acc < config.min_acceptance {
            break Termination::LowAcceptance;
        }
    };

    if current_eps == f64::INFINITY {
        current_eps = pop.iter().map(|p| p.rho).fold(0.0, f64::max);
    }
    Ok(SmcResult {
        population: pop,
        trace,
        epsilon: current_eps,
        termination,
        total_simulations: sims,
    })
}

pub fn write_trace_csv<W: Write>(w: &mut W, trace: &SmcTrace) -> io::Result<()> {
    write_header(w, &["iter", "epsilon", "p_acc", "R_t", "cum_sims"].map(String::from))?;
    for r in &trace.records {
        write_row(
            w,
            &[
                r.iter.to_string(),
                fmt_f64(r.epsilon),
                fmt_f64(r.p_acc),
                r.r_t.to_string(),
                r.cum_sims.to_string(),
            ],
        )?;
    }
    Ok(())
}

pub fn write_population_csv<W: Write>(w: &mut W, population: &[Particle]) -> io::Result<()> {
    let d = population.first().map_or(0, |p| p.theta.len());
    let mut cols: Vec<String> = indexed("theta_", d).collect();
    cols.push("rho".into());
    write_header(w, &cols)?;
    for p in population {
        let mut row: Vec<String> = p.theta.iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(p.rho));
        write_row(w, &row)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cellsbi_core::{simulator::finite_summary, Prior, Simulator, SummaryVector};

    #[test]
    fn threshold_by_rank() {
        let th = adaptive_threshold(&[3.0, 1.0, 4.0, 2.0], 0.5);
        assert_eq!(th.epsilon, 2.0);
        assert_eq!(th.keep, vec![1, 3]);
        let mut d = th.discard.clone();
        d.sort();
        assert_eq!(d, vec![0, 2]);
        assert!(!th.stagnant);
    }

    #[test]
    fn threshold_thousand() {
        let rhos: Vec<f64> = (1..=1000).map(f64::from).collect();
        let th = adaptive_threshold(&rhos, 0.5);
        assert_eq!(th.epsilon, 500.0);
        assert_eq!(th.discard.len(), 500);
    }

    #[test]
    fn threshold_all_equal_is_stagnant() {
        let th = adaptive_threshold(&[2.5; 6], 0.5);
        assert_eq!(th.epsilon, 2.5);
        assert!(th.stagnant);
    }

    #[test]
    fn step_counts() {
        assert_eq!(compute_num_mcmc_steps(0.5, 0.01, 500), 7);
        assert_eq!(compute_num_mcmc_steps(0.99, 0.01, 500), 1);
        assert_eq!(compute_num_mcmc_steps(0.1, 0.01, 500), 44);
        assert_eq!(compute_num_mcmc_steps(0.0, 0.01, 500), 500);
        assert_eq!(compute_num_mcmc_steps(1.0, 0.01, 500), 1);
        assert_eq!(compute_num_mcmc_steps(1e-6, 0.01, 500), 500);
    }

    #[test]
    fn config_bounds() {
        let mut c = SmcConfig::default();
        assert!(c.validate().is_ok());
        c.a = 0.0;
        assert!(c.validate().is_err());
        c = SmcConfig {
            c: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = SmcConfig {
            n_particles: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    /// Summary equals theta.
    struct Identity(Prior);

    impl Simulator for Identity {
        type Output = Vec<f64>;
        fn prior(&self) -> &Prior {
            &self.0
        }
        fn summary_dim(&self) -> usize {
            self.0.dim()
        }
        fn simulate(&self, theta: &[f64], _: SeedStream) -> Result<Vec<f64>, SimError> {
            Ok(theta.to_vec())
        }
        fn summarize(&self, o: &Vec<f64>) -> Result<SummaryVector, SimError> {
            finite_summary(o.clone())
        }
    }

    #[test]
    fn zero_covariance_leaves_population_unchanged() {
        let model = Identity(Prior::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap());
        let pop: Vec<Particle> = (0..8)
            .map(|i| {
                let t = vec![0.1 * i as f64 + 0.05, 0.5];
                let rho = discrepancy(&[0.0, 0.5], &t, &Metric::Euclidean).unwrap();
                Particle {
                    theta: t.clone(),
                    summary: t,
                    rho,
                }
            })
            .collect();
        let rhos: Vec<f64> = pop.iter().map(|p| p.rho).collect();
        let th = adaptive_threshold(&rhos, 0.5);
        let (moved, p_acc, sims) = resample_and_move(
            &pop,
            &th,
            th.epsilon,
            &DMatrix::zeros(2, 2),
            5,
            &model,
            &[0.0, 0.5],
            &Metric::Euclidean,
            SeedStream::new(3),
        )
        .unwrap();
        assert_eq!(p_acc, 1.0);
        assert_eq!(sims, 4 * 5);
        for p in &moved {
            assert!(p.rho <= th.epsilon);
        }
        // survivors untouched, refilled slots are exact copies of survivors
        for &k in &th.keep {
            assert_eq!(moved[k], pop[k]);
        }
        for &s in &th.discard {
            assert!(th.keep.iter().any(|&k| pop[k] == moved[s]));
        }
    }
}
