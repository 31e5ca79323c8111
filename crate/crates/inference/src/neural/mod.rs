//! Neural conditional density estimation for posterior (NPE, TSNPE) and
//! likelihood (NLE, RSNL) based inference.

pub mod estimator;
pub mod mdn;
pub mod nle;
pub mod npe;

use cellsbi_core::{CoreError, SimError};

pub use estimator::{
    decode, encode, to_bytes, train_cnde, ConditionalDensityEstimator, DecodeError, Direction, Standardizer,
    TrainingConfig, TrainingReport,
};
pub use nle::{
    nle_posterior_sample, rsnl_posterior_sample, run_snle, LogLikelihood, McmcConfig, PosteriorChain, RsnlConfig,
    SnleResult,
};
pub use npe::{npe_sample, run_npe, run_tsnpe, tsnpe_round, NpeSamples, RoundReport, TrainingSet, TsnpeConfig};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid neural configuration: {0}")]
    Config(String),
    #[error("need at least 100 training pairs, got {0}")]
    TooFewPairs(usize),
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("estimator direction is {found:?}, expected {expected:?}")]
    WrongDirection { expected: Direction, found: Direction },
    #[error("{fraction:.4} of posterior draws fell outside the prior")]
    Leakage { fraction: f64 },
    #[error("truncation region is empty")]
    EmptyTruncation,
    #[error("log-density is not finite at the initial point")]
    NonFiniteInitial,
    #[error("initial parameter is outside the prior support")]
    InitialOutsideSupport,
    #[error("estimator decode failed: {0}")]
    Decode(#[from] DecodeError),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
