//! Iterative LQR around a noise-free nominal trajectory.

use nalgebra::{DMatrix, DVector};

use super::lqr::{solve_affine_lq, AffineLqProblem};
use super::{AffineValueFunction, Policy, PolicyKind};
use crate::error::{check_dim, PipfError, Result};
use crate::observation::{ObservationModel, ObservationRecord};
use crate::scalar::{lit, Real};
use crate::sde::{DiffusionModel, TimeGrid, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlqrConfig {
    /// Maximum number of improvement iterations.
    pub iters: usize,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl Default for IlqrConfig {
    fn default() -> Self {
        Self {
            iters: 10,
            backtrack: 0.5,
            max_halvings: 8,
        }
    }
}

/// Noise-free trajectory `(x̄, ū)` with drift Jacobians `A_j = ∂b/∂x(t_j, x̄_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory<T: Real> {
    pub start: usize,
    pub states: Vec<DVector<T>>,
    pub controls: Vec<DVector<T>>,
    pub jacobians: Vec<DMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct IlqrOutput<T: Real> {
    /// Affine feedback synthesised around the final nominal.
    pub policy: Policy<T>,
    pub nominal: NominalTrajectory<T>,
    pub value: AffineValueFunction<T>,
    /// Discretized window cost of every accepted nominal, starting with the
    /// zero-control rollout.
    pub cost_history: Vec<T>,
}

/// Noise-free window cost
/// `Σ_j ½‖u_j‖²Δt + ‖h(x_j)‖²Δt/2σ² − h(x_{j+1})·ΔY_j/σ²`.
pub fn discretized_cost<T: Real, O: ObservationModel<T> + ?Sized>(
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    start: usize,
    states: &[DVector<T>],
    controls: &[DVector<T>],
) -> T {
    let dt = grid.dt();
    let half = lit::<T>(0.5);
    let inv_var = T::one() / (obs.noise_scale() * obs.noise_scale());
    let mut h = DVector::zeros(obs.obs_dim());
    obs.sensor(grid.time(start), &states[0], &mut h);
    let mut total = T::zero();
    for (i, u) in controls.iter().enumerate() {
        let j = start + i;
        total += half * u.norm_squared() * dt + half * h.norm_squared() * dt * inv_var;
        obs.sensor(grid.time(j + 1), &states[i + 1], &mut h);
        total -= h.dot(record.dy(j)) * inv_var;
    }
    total
}

fn rollout_step<T: Real, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    t: T,
    x: &DVector<T>,
    u: &DVector<T>,
    dt: T,
) -> DVector<T> {
    let b = model.drift_at(t, x);
    let sigma = model.dispersion_at(t, x);
    x + (b + sigma * u) * dt
}

fn linearize<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    start: usize,
    states: &[DVector<T>],
) -> (AffineLqProblem<T>, Vec<DMatrix<T>>)
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    let steps = states.len() - 1;
    let dt = grid.dt();
    let inv_var = T::one() / (obs.noise_scale() * obs.noise_scale());
    let mut problem = AffineLqProblem {
        start,
        dt,
        a: Vec::with_capacity(steps),
        c: Vec::with_capacity(steps),
        sigma: Vec::with_capacity(steps),
        q: Vec::with_capacity(steps),
        lin: Vec::with_capacity(steps),
    };
    let mut h_jac = obs.sensor_jacobian(grid.time(start), &states[0]);
    for i in 0..steps {
        let j = start + i;
        let (t, x) = (grid.time(j), &states[i]);
        let a = model.drift_jacobian(t, x);
        problem.c.push(model.drift_at(t, x) - &a * x);
        problem.a.push(a);
        problem.sigma.push(model.dispersion_at(t, x));
        let ht = h_jac.transpose();
        let h_bar = obs.sensor_at(t, x);
        problem.q.push(&ht * &h_jac * inv_var);
        let next_jac = obs.sensor_jacobian(grid.time(j + 1), &states[i + 1]);
        let lin = &ht * (h_bar - &h_jac * x) * inv_var - next_jac.transpose() * record.dy(j) * (inv_var / dt);
        problem.lin.push(lin);
        h_jac = next_jac;
    }
    let jacobians = problem.a.clone();
    (problem, jacobians)
}

/// iLQR proposal on `window` starting from `x_init`.
///
/// Each iteration linearizes the dynamics and quadratizes the measurement
/// cost (Gauss–Newton) along the nominal, solves the affine LQ problem, and
/// rolls out `u = ū + α(k + G x̄ − ū) + G(x − x̄)` with `α` shrunk until the
/// discretized cost strictly decreases. Iteration stops early when no step
/// size improves the cost. The returned feedback is re-synthesised around the
/// final nominal.
pub fn ilqr_design<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
    x_init: &DVector<T>,
    config: &IlqrConfig,
) -> Result<IlqrOutput<T>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    if config.iters == 0 {
        return Err(PipfError::Usage("iLQR needs at least one iteration".into()));
    }
    window.check_on(grid)?;
    if window.end > record.steps() {
        return Err(PipfError::Usage("window extends past the observation record".into()));
    }
    check_dim("iLQR initial state", model.state_dim(), x_init.len())?;
    let (start, steps, m) = (window.start, window.len(), model.noise_dim());
    let dt = grid.dt();

    let mut controls = vec![DVector::zeros(m); steps];
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x_init.clone());
    for i in 0..steps {
        let next = rollout_step(model, grid.time(start + i), &states[i], &controls[i], dt);
        states.push(next);
    }
    let mut cost = discretized_cost(obs, record, grid, start, &states, &controls);
    if !cost.is_finite() {
        return Err(PipfError::Design("nominal rollout has non-finite cost".into()));
    }
    let mut history = vec![cost];

    for _ in 0..config.iters {
        let (problem, _) = linearize(model, obs, record, grid, start, &states);
        let Ok(value) = solve_affine_lq(&problem) else {
            break;
        };
        let policy = problem.policy(&value, PolicyKind::Ilqr);
        let affine = policy.as_affine().expect("LQ policy is affine");
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mut xs = Vec::with_capacity(steps + 1);
            let mut us = Vec::with_capacity(steps);
            xs.push(x_init.clone());
            for i in 0..steps {
                let j = start + i;
                let g = affine.gain(j);
                let target = affine.offset(j) + g * &states[i];
                let u = &controls[i] + (target - &controls[i]) * alpha + g * (&xs[i] - &states[i]);
                xs.push(rollout_step(model, grid.time(j), &xs[i], &u, dt));
                us.push(u);
            }
            let trial = discretized_cost(obs, record, grid, start, &xs, &us);
            if trial.is_finite() && trial < cost {
                accepted = Some((xs, us, trial));
                break;
            }
            alpha *= lit::<T>(config.backtrack);
        }
        match accepted {
            Some((xs, us, trial)) => {
                states = xs;
                controls = us;
                cost = trial;
                history.push(cost);
            }
            None => break,
        }
    }

    let (problem, jacobians) = linearize(model, obs, record, grid, start, &states);
    let value = solve_affine_lq(&problem)?;
    let policy = problem.policy(&value, PolicyKind::Ilqr);
    Ok(IlqrOutput {
        policy,
        nominal: NominalTrajectory {
            start,
            states,
            controls,
            jacobians,
        },
        value,
        cost_history: history,
    })
}
