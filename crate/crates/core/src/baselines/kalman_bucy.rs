//! Euler-discretized Kalman–Bucy filter for linear-Gaussian models.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, PipfError, Result};
use crate::observation::{LinearSensor, ObservationModel, ObservationRecord};
use crate::scalar::{lit, Real};
use crate::sde::{DiffusionModel, LinearSde, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBucyState<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

/// One Euler step of
/// `dm = A m dt + P Cᵀ/σ_B² (dY − C m dt)` and
/// `dP/dt = A P + P Aᵀ − P CᵀC P/σ_B² + σσᵀ`.
///
/// `process` is `σσᵀ`; `step` only labels a loss of definiteness.
#[allow(clippy::too_many_arguments)]
pub fn kalman_bucy_step<T: Real>(
    state: &KalmanBucyState<T>,
    a: &DMatrix<T>,
    process: &DMatrix<T>,
    c: &DMatrix<T>,
    sigma_b: T,
    dy: &DVector<T>,
    dt: T,
    step: usize,
) -> Result<KalmanBucyState<T>> {
    let n = state.mean.len();
    check_dim("Kalman-Bucy drift", n, a.nrows())?;
    check_dim("Kalman-Bucy output", n, c.ncols())?;
    check_dim("Kalman-Bucy increment", c.nrows(), dy.len())?;
    let inv_var = T::one() / (sigma_b * sigma_b);
    let (m, p) = (&state.mean, &state.cov);
    let gain = p * c.transpose() * inv_var;
    let innovation = dy - c * m * dt;
    let mean = m + a * m * dt + &gain * innovation;
    let ap = a * p;
    let mut cov = p + (&ap + ap.transpose() - &gain * c * p + process) * dt;
    let half = lit::<T>(0.5);
    cov = (&cov + cov.transpose()) * half;
    if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) || cov.clone().cholesky().is_none() {
        return Err(PipfError::Oracle {
            step,
            reason: "Kalman-Bucy covariance lost positive definiteness; reduce dt".into(),
        });
    }
    Ok(KalmanBucyState { mean, cov })
}

/// Oracle moments at every grid index `0..=L` for `dX = AX dt + σ dW`,
/// `dY = (CX + d) dt + σ_B dB`.
pub fn kalman_bucy_run<T: Real>(
    model: &LinearSde<T>,
    sensor: &LinearSensor<T>,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
) -> Result<Vec<KalmanBucyState<T>>> {
    check_dim("sensor state dimension", model.state_dim(), sensor.state_dim())?;
    if record.steps() < grid.steps() {
        return Err(PipfError::Usage("observation record shorter than the grid".into()));
    }
    let process = model.sigma() * model.sigma().transpose();
    let dt = grid.dt();
    let prior = model.prior();
    let mut state = KalmanBucyState {
        mean: prior.mean().clone(),
        cov: prior.cov().clone(),
    };
    let mut out = Vec::with_capacity(grid.steps() + 1);
    out.push(state.clone());
    for j in 0..grid.steps() {
        let dy = record.dy(j) - sensor.offset() * dt;
        state = kalman_bucy_step(&state, model.a(), &process, sensor.c(), sensor.noise_scale(), &dy, dt, j + 1)?;
        out.push(state.clone());
    }
    Ok(out)
}
