//! Asynchronous Gibbs sampling.
//!
//! Workers run random-scan Gibbs on the most recent coordinate values they
//! know about, broadcasting each transmitted draw to their peers. Received
//! updates are applied either unconditionally (the approximate variant) or
//! through a Metropolis-Hastings test that treats the sender's full
//! conditional as the proposal (the exact variant).
//!
//! The crate ships:
//!
//! * a deterministic discrete-event simulated transport with configurable
//!   per-link delivery probability and latency, plus a real threaded
//!   transport ([`engine`]);
//! * built-in targets: multivariate Gaussians (dense, Jacobi-style, and
//!   exponential-covariance), a gridded Gaussian-process regression model
//!   with analytic Toeplitz precision, and a hierarchical mixed-effects
//!   regression model with sufficient-statistic caching ([`models`]);
//! * the diagnostics used to judge the approximate variant: reservoir-sampled
//!   MH acceptance ratios, autocorrelation at large lags, online moments, and
//!   a divergence monitor ([`diagnostics`]).
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix `f64` for ordinary use.

pub mod diagnostics;
pub mod dist;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod message;
pub mod model;
pub mod models;
pub mod proposal;
pub mod scalar;
pub mod state;
pub mod value;

pub use error::{Error, Result};
pub use message::{Addressed, UpdateMessage};
pub use model::TargetModel;
pub use proposal::ProposalDescriptor;
pub use scalar::{EngineRng, Scalar};
pub use state::{Clock, ParameterState, StateLayout, WorkerId};
pub use value::{CoordinateId, Value, ValueShape};

/// Default scalar type used by the CLI and the experiment configs.
pub type Real = f64;

/// `f64` instantiations of the main generic types.
pub type Value64 = Value<Real>;
pub type ParameterState64 = ParameterState<Real>;
pub type UpdateMessage64 = UpdateMessage<Real>;
pub type ProposalDescriptor64 = ProposalDescriptor<Real>;
pub type GaussianTarget64 = models::gaussian::GaussianTarget<Real>;
pub type GpModel64 = models::gp::GpModel<Real>;
pub type MixedModel64 = models::mixed::MixedModel<Real>;
