//! Bootstrap sequential importance resampling on the Euler-discretized model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, PipfError, Result};
use crate::observation::{gaussian_log_likelihood, transition_log_likelihood, ObservationModel, ObservationRecord};
use crate::pipf::{effective_ratio, normalize_log_weights, resample_ancestors, FilterOutput, ResamplingScheme, WeightedEnsemble};
use crate::rng::{Lane, Stream};
use crate::scalar::{lit, log_sum_exp, Real};
use crate::sde::{sample_initial, DiffusionModel, EulerWorkspace, TimeGrid};

/// Per-step observation weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SirLikelihood {
    /// `(h(x_{s+1})·ΔY_s − ½‖h(x_s)‖²Δt)/σ²`, the one-step factor of the
    /// zero-control path weight.
    #[default]
    PathConsistent,
    /// `N(ΔY_s; h(x_s)Δt, σ²Δt·I)` at the pre-propagation state.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirConfig {
    pub particles: usize,
    pub gamma_thres: f64,
    pub resampling: bool,
    pub scheme: ResamplingScheme,
    pub likelihood: SirLikelihood,
}

impl Default for SirConfig {
    fn default() -> Self {
        Self {
            particles: 500,
            gamma_thres: 0.5,
            resampling: true,
            scheme: ResamplingScheme::Multinomial,
            likelihood: SirLikelihood::PathConsistent,
        }
    }
}

/// Particles and unnormalized log-weights at grid index `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct SirState<T: Real> {
    pub step: usize,
    pub particles: DMatrix<T>,
    pub log_weights: Vec<T>,
}

impl<T: Real> SirState<T> {
    pub fn initial<M: DiffusionModel<T> + ?Sized>(model: &M, particles: usize, stream: Stream) -> Result<Self> {
        let particles = sample_initial(model, particles, stream)?;
        let k = particles.ncols();
        Ok(Self {
            step: 0,
            particles,
            log_weights: vec![T::zero(); k],
        })
    }

    fn output(&self, grid: &TimeGrid<T>, resampled: bool) -> Result<FilterOutput<T>> {
        let ensemble = WeightedEnsemble::from_log_weights(self.particles.clone(), &self.log_weights)?;
        let lse = log_sum_exp(&self.log_weights);
        Ok(FilterOutput {
            step: self.step,
            time: grid.time(self.step),
            effective_ratio: effective_ratio(ensemble.weights())?,
            log_weights: self.log_weights.iter().map(|&l| l - lse).collect(),
            ensemble,
            resampled,
        })
    }
}

/// Propagates with zero control, reweights by the observation increment
/// `ΔY_s`, and resamples when `γ` drops below the threshold.
///
/// Step `s → s + 1` draws particle `k`'s noise from lane `Window(s + 1)`, the
/// same stream a one-step PIPF window ending at `s + 1` uses.
pub fn sir_step<T: Real, M, O>(
    state: &SirState<T>,
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    config: &SirConfig,
    stream: Stream,
) -> Result<(FilterOutput<T>, SirState<T>)>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    let s = state.step;
    if s >= grid.steps() || s >= record.steps() {
        return Err(PipfError::Usage(format!("no observation increment after step {s}")));
    }
    let (n, m) = (model.state_dim(), model.noise_dim());
    check_dim("SIR particles", n, state.particles.nrows())?;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let (t, dy) = (grid.time(s), record.dy(s));
    let mut particles = state.particles.clone();
    let mut log_weights = state.log_weights.clone();
    particles
        .as_mut_slice()
        .par_chunks_mut(n)
        .zip(log_weights.par_iter_mut())
        .enumerate()
        .try_for_each_init(
            || (EulerWorkspace::new(n, m), DVector::zeros(n), DVector::zeros(n), DVector::zeros(m), DVector::zeros(m)),
            |(ws, x, next, u, dw), (k, (col, lw))| {
                x.copy_from_slice(col);
                stream.key(Lane::Window(s + 1), k).fill_normals(s, sqrt_dt, dw);
                ws.step(model, t, x, u, dw, dt, next);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(PipfError::SimulationBlowup { step: s + 1 });
                }
                *lw += match config.likelihood {
                    SirLikelihood::PathConsistent => transition_log_likelihood(obs, t, x, next, dy, dt),
                    SirLikelihood::Gaussian => gaussian_log_likelihood(obs, t, x, dy, dt),
                };
                col.copy_from_slice(next.as_slice());
                Ok(())
            },
        )?;
    let mut next = SirState {
        step: s + 1,
        particles,
        log_weights,
    };
    let weights = normalize_log_weights(&next.log_weights)?;
    let gamma = effective_ratio(&weights)?;
    let resample = config.resampling && crate::scalar::to_f64(gamma) < config.gamma_thres;
    let out = next.output(grid, resample)?;
    if resample {
        let key = stream.key(Lane::Resample(s + 1), 0);
        let ancestors = resample_ancestors(config.scheme, &weights, weights.len(), key)?;
        next.particles = next.particles.select_columns(&ancestors);
        next.log_weights = vec![T::zero(); ancestors.len()];
    } else {
        let max = next.log_weights.iter().copied().fold(lit::<T>(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
        next.log_weights.iter_mut().for_each(|l| *l -= max);
    }
    Ok((out, next))
}

/// SIR over the whole grid; `L + 1` outputs starting with the prior sample.
pub fn sir_run<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    config: &SirConfig,
    stream: Stream,
) -> Result<Vec<FilterOutput<T>>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    if config.particles == 0 {
        return Err(PipfError::Usage("SIR needs at least one particle".into()));
    }
    let mut state = SirState::initial(model, config.particles, stream)?;
    let mut out = Vec::with_capacity(grid.steps() + 1);
    out.push(state.output(grid, false)?);
    for _ in 0..grid.steps() {
        let (o, next) = sir_step(&state, model, obs, record, grid, config, stream)?;
        out.push(o);
        state = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Policy;
    use crate::observation::{generate_observations, LinearSensor};
    use crate::pipf::{pipf_run, PipfConfig, ProposalKind};
    use crate::sde::{simulate_path, GaussianPrior, LinearSde, NoisePath};

    fn ou(steps: usize, sigma_b: f64) -> (LinearSde<f64>, LinearSensor<f64>, ObservationRecord<f64>, TimeGrid<f64>) {
        let model = LinearSde::ornstein_uhlenbeck(1.0, 0.0, 1.0).unwrap();
        let obs = LinearSensor::identity(sigma_b).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, steps).unwrap();
        let stream = Stream::new(11, 0);
        let noise = NoisePath::generate(stream.key(Lane::Truth, 0), 0, steps, 1, 0.01);
        let truth = simulate_path(&model, &grid, &Policy::zero(1), &DVector::from_element(1, 0.8), &noise).unwrap();
        let record = generate_observations(&obs, &grid, &truth, stream).unwrap();
        (model, obs, record, grid)
    }

    #[test]
    fn blind_sensor_leaves_weights_uniform() {
        let (model, _, record, grid) = ou(20, 1.0);
        let blind = LinearSensor::new(DMatrix::zeros(1, 1), 1.0).unwrap();
        let cfg = SirConfig { particles: 16, likelihood: SirLikelihood::Gaussian, ..Default::default() };
        let out = sir_run(&model, &blind, &record, &grid, &cfg, Stream::new(0, 0)).unwrap();
        for o in &out {
            assert!(o.ensemble.weights().iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-15));
            assert!(!o.resampled);
        }
    }

    #[test]
    fn particle_at_truth_takes_all_weight() {
        let model = LinearSde::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1e-9), GaussianPrior::isotropic(DVector::zeros(1), 1.0).unwrap()).unwrap();
        let obs = LinearSensor::identity(1e-3).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 1).unwrap();
        let record = ObservationRecord::from_increments(1, vec![DVector::from_element(1, 0.5 * 0.01)]).unwrap();
        let state = SirState {
            step: 0,
            particles: DMatrix::from_row_slice(1, 3, &[-1.0, 0.5, 2.0]),
            log_weights: vec![0.0; 3],
        };
        for likelihood in [SirLikelihood::Gaussian, SirLikelihood::PathConsistent] {
            let cfg = SirConfig { resampling: false, likelihood, ..Default::default() };
            let (out, _) = sir_step(&state, &model, &obs, &record, &grid, &cfg, Stream::new(0, 0)).unwrap();
            assert!(out.ensemble.weights()[1] > 1.0 - 1e-9);
        }
    }

    #[test]
    fn matches_one_step_pipf_weights() {
        let (model, obs, record, grid) = ou(50, 0.6);
        let stream = Stream::new(4, 2);
        let sir = sir_run(&model, &obs, &record, &grid, &SirConfig { particles: 40, resampling: false, ..Default::default() }, stream).unwrap();
        let cfg = PipfConfig { particles: 40, horizon: 1, proposal: ProposalKind::Zero, resampling: false, ..Default::default() };
        let pipf = pipf_run(&model, &obs, &record, &grid, cfg, stream).unwrap();
        for (a, b) in sir.iter().zip(&pipf) {
            assert_eq!(a.ensemble.particles(), b.ensemble.particles());
            for (x, y) in a.log_weights.iter().zip(&b.log_weights) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn resampling_resets_weights() {
        let (model, obs, record, grid) = ou(40, 0.05);
        let cfg = SirConfig { particles: 100, gamma_thres: 0.9, ..Default::default() };
        let out = sir_run(&model, &obs, &record, &grid, &cfg, Stream::new(1, 0)).unwrap();
        assert!(out.iter().any(|o| o.resampled));
    }
}
