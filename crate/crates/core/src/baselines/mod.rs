//! Reference filters: bootstrap SIR, Kalman–Bucy and the Benes closed form.

mod benes;
mod kalman_bucy;
mod sir;

pub use benes::{benes_density, benes_posterior, benes_posterior_series, BenesParams, BenesPosterior};
pub use kalman_bucy::{kalman_bucy_run, kalman_bucy_step, KalmanBucyState};
pub use sir::{sir_run, sir_step, SirConfig, SirLikelihood, SirState};
