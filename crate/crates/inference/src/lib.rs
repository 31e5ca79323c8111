//! Likelihood-free inference algorithms.
//!
//! - [`smc_abc`]: adaptive sequential Monte Carlo ABC with a discard-and-refresh
//!   threshold schedule and acceptance-driven MCMC move counts.
//! - [`bsl`]: Bayesian synthetic likelihood, the `m` tuning rule, and the
//!   mean- and variance-adjusted robust variants.
//! - [`neural`]: a mixture density network used for posterior (NPE, TSNPE)
//!   and likelihood (NLE, RSNL) estimation.
//! - [`diagnostics`]: cost profiling, predictive checks, normality reports and
//!   cross-algorithm comparison tables.

pub mod csv;
pub mod diagnostics;
pub mod bsl;
pub mod mcmc;
pub mod neural;
pub mod smc_abc;

pub use smc_abc::{SmcConfig, SmcError, SmcResult, Termination};
pub use bsl::{BslChain, BslConfig, BslError, Robust};
