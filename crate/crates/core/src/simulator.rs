//! The simulator contract.
//!
//! Models implement [`Simulator`]. Inference code is written against the
//! object-safe [`SummaryModel`], which every simulator gets for free.
//! Implementations must be deterministic in `(theta, seed)` and must not
//! mutate shared state, since ensembles are simulated concurrently.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::SimError;
use crate::params::{ParameterVector, SummaryVector};
use crate::prior::Prior;
use crate::rng::SeedStream;

/// Retries granted to a draw that produced an invalid summary.
pub const DEFAULT_MAX_RETRIES: usize = 10;

pub trait Simulator: Send + Sync {
    type Output: Send;

    fn prior(&self) -> &Prior;

    fn summary_dim(&self) -> usize;

    fn param_dim(&self) -> usize {
        self.prior().dim()
    }

    fn simulate(&self, theta: &[f64], seed: SeedStream) -> Result<Self::Output, SimError>;

    fn summarize(&self, output: &Self::Output) -> Result<SummaryVector, SimError>;
}

/// Object-safe view used by the inference algorithms.
pub trait SummaryModel: Send + Sync {
    fn prior(&self) -> &Prior;
    fn summary_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn simulate_summary(&self, theta: &[f64], seed: SeedStream) -> Result<SummaryVector, SimError>;
}

impl<S: Simulator> SummaryModel for S {
    fn prior(&self) -> &Prior {
        Simulator::prior(self)
    }

    fn summary_dim(&self) -> usize {
        Simulator::summary_dim(self)
    }

    fn param_dim(&self) -> usize {
        Simulator::param_dim(self)
    }

    fn simulate_summary(&self, theta: &[f64], seed: SeedStream) -> Result<SummaryVector, SimError> {
        if theta.len() != Simulator::param_dim(self) {
            return Err(SimError::ParamDimension {
                expected: Simulator::param_dim(self),
                got: theta.len(),
            });
        }
        let out = self.simulate(theta, seed)?;
        let s = self.summarize(&out)?;
        if s.len() != Simulator::summary_dim(self) {
            return Err(SimError::SummaryDimension {
                expected: Simulator::summary_dim(self),
                got: s.len(),
            });
        }
        Ok(s)
    }
}

/// Simulate, redrawing on retryable failures with successive substreams of
/// `seed.child(..)`. Attempt 0 uses `seed` itself.
///
/// Returns the summary and the number of simulator calls made.
pub fn simulate_valid(
    model: &dyn SummaryModel,
    theta: &[f64],
    seed: SeedStream,
    max_retries: usize,
) -> Result<(SummaryVector, u64), SimError> {
    let mut last = None;
    for attempt in 0..=max_retries {
        let s = if attempt == 0 {
            seed
        } else {
            seed.child(attempt as u64)
        };
        match model.simulate_summary(theta, s) {
            Ok(v) => return Ok((v, attempt as u64 + 1)),
            Err(e) if e.is_retryable() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(SimError::RetriesExhausted {
        attempts: max_retries + 1,
        last: Box::new(last.expect("at least one attempt")),
    })
}

/// Wraps a simulator and counts every `simulate` call.
pub struct Counting<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M> Counting<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: Simulator> Simulator for Counting<M> {
    type Output = M::Output;

    fn prior(&self) -> &Prior {
        self.inner.prior()
    }

    fn summary_dim(&self) -> usize {
        self.inner.summary_dim()
    }

    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn simulate(&self, theta: &[f64], seed: SeedStream) -> Result<Self::Output, SimError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.simulate(theta, seed)
    }

    fn summarize(&self, output: &Self::Output) -> Result<SummaryVector, SimError> {
        self.inner.summarize(output)
    }
}

/// Call counter for a model only known as a trait object.
pub struct CountingModel<'a> {
    inner: &'a dyn SummaryModel,
    calls: AtomicU64,
}

impl<'a> CountingModel<'a> {
    pub fn new(inner: &'a dyn SummaryModel) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl SummaryModel for CountingModel<'_> {
    fn prior(&self) -> &Prior {
        self.inner.prior()
    }

    fn summary_dim(&self) -> usize {
        self.inner.summary_dim()
    }

    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn simulate_summary(&self, theta: &[f64], seed: SeedStream) -> Result<SummaryVector, SimError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.simulate_summary(theta, seed)
    }
}

/// Helper for simulators whose raw output is already the summary.
pub fn finite_summary(values: Vec<f64>) -> Result<SummaryVector, SimError> {
    SummaryVector::new(values).map_err(|e| match e {
        crate::error::CoreError::NonFinite { index } => SimError::NonFiniteSummary { index },
        other => SimError::Failed(other.to_string()),
    })
}

/// Convenience to lift a raw slice into a checked parameter vector.
pub fn param_vector(theta: &[f64]) -> Result<ParameterVector, SimError> {
    ParameterVector::new(theta.to_vec()).map_err(|e| SimError::Failed(e.to_string()))
}
