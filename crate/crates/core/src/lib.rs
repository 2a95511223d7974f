//! Path integral particle filtering for continuous-time diffusions.
//!
//! The filter treats smoothing over a sliding window as a stochastic optimal
//! control problem: particles are simulated under a proposal control (zero,
//! LQR or iLQR) and reweighted by `exp(−S)` for the path cost `S` induced by
//! the observations. Reference filters (bootstrap SIR, Kalman–Bucy, Benes)
//! live in [`baselines`].
//!
//! Everything numerical is generic over the scalar type ([`Real`], `f32` or
//! `f64`); the `*64` aliases below fix it to `f64`.

pub mod baselines;
pub mod control;
pub mod error;
pub mod metrics;
pub mod observation;
pub mod pipf;
pub mod rng;
pub mod scalar;
pub mod sde;

pub use error::{PipfError, Result};
pub use rng::{Lane, Stream, StreamKey};
pub use scalar::Real;

pub type TimeGrid64 = sde::TimeGrid<f64>;
pub type LinearSde64 = sde::LinearSde<f64>;
pub type BenesSde64 = sde::BenesSde<f64>;
pub type LinearSensor64 = observation::LinearSensor<f64>;
pub type ObservationRecord64 = observation::ObservationRecord<f64>;
pub type Policy64 = control::Policy<f64>;
pub type WeightedEnsemble64 = pipf::WeightedEnsemble<f64>;
pub type FilterOutput64 = pipf::FilterOutput<f64>;
