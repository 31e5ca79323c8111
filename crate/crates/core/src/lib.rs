//! Shared building blocks for likelihood-free inference on stochastic simulators.
//!
//! Every inference algorithm in the workspace talks to models through the
//! [`Simulator`] contract defined here, draws parameters from a [`Prior`],
//! and derives all randomness from a [`SeedStream`] so that results do not
//! depend on how work is scheduled across threads.

pub mod distance;
pub mod error;
pub mod linalg;
pub mod params;
pub mod prior;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod toy;
pub mod transform;

pub use distance::{discrepancy, Metric};
pub use error::{CoreError, SimError};
pub use params::{ParameterVector, SummaryVector};
pub use prior::{Marginal, Prior};
pub use rng::SeedStream;
pub use simulator::{simulate_valid, Counting, CountingModel, Simulator, SummaryModel, DEFAULT_MAX_RETRIES};
pub use toy::{GaussianToy, ToySummary};
pub use transform::{BoundTransform, DimTransform};
