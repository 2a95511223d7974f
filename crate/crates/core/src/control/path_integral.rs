//! Importance-sampled path-integral estimate of the optimal control.

use nalgebra::DVector;
use rayon::prelude::*;

use super::Policy;
use crate::error::{check_dim, PipfError, Result};
use crate::observation::{window_cost, CostForm, ObservationModel, ObservationRecord};
use crate::pipf::{effective_ratio, normalize_log_weights};
use crate::rng::{Lane, Stream};
use crate::scalar::{lit, Real};
use crate::sde::{simulate_path, DiffusionModel, NoisePath, TimeGrid, Window};

#[derive(Debug, Clone, PartialEq)]
pub struct PathIntegralEstimate<T: Real> {
    /// `u(t, x) + Σ w_i ΔW_i / (Δt Σ w_i)`
    pub control: DVector<T>,
    /// Proposal output `u(t, x)`.
    pub proposal: DVector<T>,
    /// Unnormalized `−S_i`.
    pub log_weights: Vec<T>,
    pub effective_ratio: T,
}

impl<T: Real> PathIntegralEstimate<T> {
    /// Sample variance of the log-weights.
    pub fn log_weight_variance(&self) -> T {
        sample_variance(&self.log_weights)
    }
}

pub(crate) fn sample_variance<T: Real>(v: &[T]) -> T {
    let n = lit::<T>(v.len() as f64);
    let mean = v.iter().fold(T::zero(), |a, &b| a + b) / n;
    v.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / (n - T::one())
}

/// Samples `samples` trajectories from `x` at grid index `start` up to
/// `horizon_end` under `policy` and reweights their first noise increment.
#[allow(clippy::too_many_arguments)]
pub fn path_integral_control_estimate<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    policy: &Policy<T>,
    start: usize,
    x: &DVector<T>,
    samples: usize,
    horizon_end: usize,
    stream: Stream,
) -> Result<PathIntegralEstimate<T>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    if samples < 2 {
        return Err(PipfError::Usage("path-integral estimate needs at least two samples".into()));
    }
    check_dim("estimator state", model.state_dim(), x.len())?;
    let window = Window::new(start, horizon_end)?;
    let (m, dt) = (model.noise_dim(), grid.dt());
    let rollouts: Vec<(T, DVector<T>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let noise = NoisePath::generate(stream.key(Lane::Estimator(start), i), start, window.len(), m, dt);
            let path = simulate_path(model, grid, policy, x, &noise)?;
            let cost = window_cost(&path, obs, record, grid, window, CostForm::YDh)?;
            Ok((-cost.total(), noise.increment(start).clone()))
        })
        .collect::<Result<_>>()?;
    let log_weights: Vec<T> = rollouts.iter().map(|r| r.0).collect();
    let weights = normalize_log_weights(&log_weights)?;
    let mut correction = DVector::zeros(m);
    for (w, (_, dw)) in weights.iter().zip(&rollouts) {
        correction.axpy(*w, dw, T::one());
    }
    let proposal = policy.control(start, x);
    Ok(PathIntegralEstimate {
        control: &proposal + correction / dt,
        proposal,
        effective_ratio: effective_ratio(&weights)?,
        log_weights,
    })
}
