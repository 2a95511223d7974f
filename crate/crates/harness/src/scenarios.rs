//! The benchmark scenarios: OU, H-sweep, linear dimension sweep and Benes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use pipf_core::baselines::{
    benes_density, benes_posterior_series, kalman_bucy_run, sir_step, BenesParams, SirConfig, SirState,
};
use pipf_core::control::{IlqrConfig, Policy};
use pipf_core::metrics::{ensemble_moments, kde, l1_density_distance, mse_series, Moments};
use pipf_core::observation::{generate_observations, LinearSensor, ObservationRecord};
use pipf_core::pipf::{FilterOutput, PipfConfig, PipfFilter, ProposalKind, WeightedEnsemble};
use pipf_core::sde::{simulate_path, DiffusionModel, GaussianPrior, LinearSde, NoisePath, StatePath, TimeGrid};
use pipf_core::{Lane, PipfError, Stream};

use crate::config::{Controller, ExperimentConfig, Scenario};
use crate::HarnessError;

/// One CSV line: one estimator at one step of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub trial: usize,
    pub step: usize,
    pub time: f64,
    pub estimator: String,
    pub mse_mean: f64,
    pub mse_cov: f64,
    pub effective_ratio: f64,
    pub resampled: bool,
    pub mean: Vec<f64>,
}

/// One point of a density snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub time: f64,
    pub x: f64,
    pub density: f64,
    pub source: String,
}

/// L¹ distance between an estimator's KDE and the analytic density.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub trial: usize,
    pub time: f64,
    pub estimator: String,
    pub l1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub snapshots: Vec<SnapshotRow>,
    pub distances: Vec<DistanceRow>,
}

impl RunOutput {
    /// Number of `mean_i` columns needed.
    pub fn mean_width(&self) -> usize {
        self.rows.iter().map(|r| r.mean.len()).max().unwrap_or(0)
    }

    fn append(&mut self, mut other: RunOutput) {
        self.rows.append(&mut other.rows);
        self.snapshots.append(&mut other.snapshots);
        self.distances.append(&mut other.distances);
    }

    /// Rows of one estimator, in trial then step order.
    pub fn rows_for<'a>(&'a self, estimator: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }
}

/// A filter to run on a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Sir,
    Pipf { proposal: ProposalKind, horizon: usize },
}

impl Estimator {
    pub fn tag(&self) -> String {
        match self {
            Estimator::Sir => "sir".into(),
            Estimator::Pipf { proposal, .. } => format!("pipf-{}", proposal.tag()),
        }
    }
}

/// Per-step moments and diagnostics of one filter run.
#[derive(Debug, Clone)]
pub struct Track {
    pub moments: Vec<Moments<f64>>,
    pub effective_ratio: Vec<f64>,
    pub resampled: Vec<bool>,
    /// Ensembles at the requested snapshot indices, in request order.
    pub snapshots: Vec<WeightedEnsemble<f64>>,
}

impl Track {
    fn new(steps: usize) -> Self {
        Self {
            moments: Vec::with_capacity(steps + 1),
            effective_ratio: Vec::with_capacity(steps + 1),
            resampled: Vec::with_capacity(steps + 1),
            snapshots: Vec::new(),
        }
    }

    fn push(&mut self, out: FilterOutput<f64>, snap_at: &[usize]) {
        self.moments.push(ensemble_moments(&out.ensemble));
        self.effective_ratio.push(out.effective_ratio);
        self.resampled.push(out.resampled);
        if snap_at.contains(&out.step) {
            self.snapshots.push(out.ensemble);
        }
    }
}

/// Ground truth path and its observation record for one trial.
pub fn simulate_truth<M: DiffusionModel<f64>>(
    model: &M,
    sensor: &LinearSensor<f64>,
    grid: &TimeGrid<f64>,
    stream: Stream,
) -> Result<(StatePath<f64>, ObservationRecord<f64>), PipfError> {
    let (n, m) = (model.state_dim(), model.noise_dim());
    let x0 = model.prior().transform(&stream.key(Lane::Truth, 1).normals(0, n, 1.0));
    let noise = NoisePath::generate(stream.key(Lane::Truth, 0), 0, grid.steps(), m, grid.dt());
    let truth = simulate_path(model, grid, &Policy::zero(m), &x0, &noise)?;
    let record = generate_observations(sensor, grid, &truth, stream)?;
    Ok((truth, record))
}

fn ilqr_config(cfg: &ExperimentConfig) -> IlqrConfig {
    IlqrConfig {
        iters: cfg.ilqr.iters,
        backtrack: cfg.ilqr.backtrack,
        max_halvings: cfg.ilqr.max_halvings,
    }
}

fn proposal(cfg: &ExperimentConfig, controller: Controller) -> ProposalKind {
    match controller {
        Controller::Zero => ProposalKind::Zero,
        Controller::Lqr => ProposalKind::Lqr,
        Controller::Ilqr => ProposalKind::Ilqr(ilqr_config(cfg)),
    }
}

/// Runs `estimator` over the whole record, keeping only moments and the
/// ensembles at `snap_at`.
#[allow(clippy::too_many_arguments)]
pub fn track<M: DiffusionModel<f64>>(
    estimator: &Estimator,
    model: &M,
    sensor: &LinearSensor<f64>,
    record: &ObservationRecord<f64>,
    grid: &TimeGrid<f64>,
    cfg: &ExperimentConfig,
    particles: usize,
    stream: Stream,
    snap_at: &[usize],
) -> Result<Track, PipfError> {
    let mut tr = Track::new(grid.steps());
    match *estimator {
        Estimator::Sir => {
            let sir = SirConfig {
                particles,
                gamma_thres: cfg.gamma_thres,
                resampling: cfg.resampling,
                ..Default::default()
            };
            let mut state = SirState::initial(model, particles, stream)?;
            tr.push(
                FilterOutput {
                    step: 0,
                    time: grid.time(0),
                    ensemble: WeightedEnsemble::uniform(state.particles.clone())?,
                    log_weights: vec![-(particles as f64).ln(); particles],
                    effective_ratio: 1.0,
                    resampled: false,
                },
                snap_at,
            );
            for _ in 0..grid.steps() {
                let (out, next) = sir_step(&state, model, sensor, record, grid, &sir, stream)?;
                tr.push(out, snap_at);
                state = next;
            }
        }
        Estimator::Pipf { proposal, horizon } => {
            let pipf = PipfConfig {
                particles,
                horizon,
                proposal,
                gamma_thres: cfg.gamma_thres,
                resampling: cfg.resampling,
                ..Default::default()
            };
            for out in PipfFilter::new(model, sensor, record, grid, pipf, stream)? {
                tr.push(out?, snap_at);
            }
        }
    }
    Ok(tr)
}

fn rows_from(
    trial: usize,
    tag: &str,
    track: &Track,
    oracle: &[Moments<f64>],
    grid: &TimeGrid<f64>,
) -> Result<Vec<ResultRow>, PipfError> {
    let scores = mse_series(&track.moments, oracle, &track.effective_ratio, &track.resampled)?;
    Ok((0..scores.len())
        .map(|j| ResultRow {
            trial,
            step: j,
            time: grid.time(j),
            estimator: tag.to_string(),
            mse_mean: scores.mse_mean[j],
            mse_cov: scores.mse_cov[j],
            effective_ratio: scores.effective_ratio[j],
            resampled: scores.resampled[j],
            mean: track.moments[j].mean.iter().copied().collect(),
        })
        .collect())
}

fn kalman_oracle(
    model: &LinearSde<f64>,
    sensor: &LinearSensor<f64>,
    record: &ObservationRecord<f64>,
    grid: &TimeGrid<f64>,
) -> Result<Vec<Moments<f64>>, PipfError> {
    Ok(kalman_bucy_run(model, sensor, record, grid)?
        .into_iter()
        .map(|s| Moments { mean: s.mean, cov: s.cov })
        .collect())
}

fn require(cfg: &ExperimentConfig, scenario: Scenario) -> Result<(), HarnessError> {
    cfg.validate()?;
    if cfg.scenario != scenario {
        return Err(HarnessError::Config(format!(
            "expected scenario {scenario:?}, configuration names {:?}",
            cfg.scenario
        )));
    }
    Ok(())
}

fn grid_of(cfg: &ExperimentConfig) -> Result<TimeGrid<f64>, HarnessError> {
    TimeGrid::new(0.0, cfg.dt, cfg.steps).map_err(config_error)
}

/// Invalid model parameters are configuration errors.
fn config_error(e: PipfError) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Runs trials in parallel and concatenates their output in trial order.
fn over_trials<F>(trials: usize, f: F) -> Result<RunOutput, HarnessError>
where
    F: Fn(usize) -> Result<RunOutput, PipfError> + Sync,
{
    let parts: Vec<RunOutput> = (0..trials).into_par_iter().map(&f).collect::<Result<_, _>>()?;
    let mut out = RunOutput::default();
    for p in parts {
        out.append(p);
    }
    Ok(out)
}

fn linear_trial(
    trial: usize,
    model: &LinearSde<f64>,
    sensor: &LinearSensor<f64>,
    grid: &TimeGrid<f64>,
    cfg: &ExperimentConfig,
    estimators: &[(String, Estimator)],
) -> Result<RunOutput, PipfError> {
    let stream = Stream::new(cfg.seed, trial as u64);
    let (_, record) = simulate_truth(model, sensor, grid, stream)?;
    let oracle = kalman_oracle(model, sensor, &record, grid)?;
    let mut out = RunOutput::default();
    for (tag, est) in estimators {
        let tr = track(est, model, sensor, &record, grid, cfg, cfg.particles, stream, &[])?;
        out.rows.extend(rows_from(trial, tag, &tr, &oracle, grid)?);
    }
    Ok(out)
}

fn ou_system(cfg: &ExperimentConfig) -> Result<(LinearSde<f64>, LinearSensor<f64>), HarnessError> {
    let model = LinearSde::ornstein_uhlenbeck(cfg.ou.kappa, cfg.ou.m0, cfg.ou.p0).map_err(config_error)?;
    let sensor = LinearSensor::identity(cfg.sigma_b).map_err(config_error)?;
    Ok((model, sensor))
}

/// SIR, PIPF-zero and PIPF-LQR on the scalar OU model, scored against
/// Kalman–Bucy.
pub fn run_ou(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    require(cfg, Scenario::Ou)?;
    let grid = grid_of(cfg)?;
    let (model, sensor) = ou_system(cfg)?;
    let estimators: Vec<(String, Estimator)> = [
        Estimator::Sir,
        Estimator::Pipf { proposal: ProposalKind::Zero, horizon: cfg.horizon },
        Estimator::Pipf { proposal: ProposalKind::Lqr, horizon: cfg.horizon },
    ]
    .into_iter()
    .map(|e| (e.tag(), e))
    .collect();
    over_trials(cfg.trials, |t| linear_trial(t, &model, &sensor, &grid, cfg, &estimators))
}

/// SIR plus PIPF with the configured controller for every `H` in `h_list`,
/// tagged `pipf-<controller>-h<H>`. All windows see the same truth.
pub fn run_h_sweep(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    require(cfg, Scenario::Ou)?;
    let grid = grid_of(cfg)?;
    let (model, sensor) = ou_system(cfg)?;
    let kind = proposal(cfg, cfg.controller);
    let mut estimators = vec![("sir".to_string(), Estimator::Sir)];
    for &h in &cfg.h_list {
        let e = Estimator::Pipf { proposal: kind, horizon: h };
        estimators.push((format!("{}-h{h}", e.tag()), e));
    }
    over_trials(cfg.trials, |t| linear_trial(t, &model, &sensor, &grid, cfg, &estimators))
}

/// Random stable `A` and output matrix `C` for dimension `n`, fixed by the
/// base seed alone.
///
/// `A` has standard normal entries and is shifted by a multiple of the
/// identity until the largest eigenvalue of its symmetric part is at most
/// `−0.1`; `C` is `n × n` with `N(0, 1/n)` entries.
pub fn linear_nd_system(seed: u64, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let key = Stream::new(seed, u64::MAX).key(Lane::Aux(n as u64), 0);
    let mut a = DMatrix::from_iterator(n, n, key.normals::<f64>(0, n * n, 1.0).iter().copied());
    let sym = (&a + a.transpose()) * 0.5;
    let top = sym.symmetric_eigenvalues().max();
    if top > -0.1 {
        a -= DMatrix::identity(n, n) * (top + 0.1);
    }
    let c = DMatrix::from_iterator(n, n, key.normals::<f64>(1, n * n, 1.0 / (n as f64).sqrt()).iter().copied());
    (a, c)
}

/// SIR and PIPF with the configured controller for every dimension in
/// `linear_nd.dims`, tagged `sir-n<n>` and `pipf-<controller>-n<n>`.
pub fn run_linear_nd(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    require(cfg, Scenario::LinearNd)?;
    let grid = grid_of(cfg)?;
    let kind = proposal(cfg, cfg.controller);
    let mut systems = Vec::new();
    for &n in &cfg.linear_nd.dims {
        let (a, c) = linear_nd_system(cfg.seed, n);
        let prior = GaussianPrior::isotropic(DVector::from_element(n, cfg.linear_nd.m0), cfg.linear_nd.p0)
            .map_err(config_error)?;
        let model = LinearSde::new(a, DMatrix::identity(n, n), prior).map_err(config_error)?;
        let sensor = LinearSensor::new(c, cfg.sigma_b).map_err(config_error)?;
        let pipf = Estimator::Pipf { proposal: kind, horizon: cfg.horizon };
        let estimators = vec![(format!("sir-n{n}"), Estimator::Sir), (format!("{}-n{n}", pipf.tag()), pipf)];
        systems.push((model, sensor, estimators));
    }
    over_trials(cfg.trials, |t| {
        let mut out = RunOutput::default();
        for (model, sensor, estimators) in &systems {
            out.append(linear_trial(t, model, sensor, &grid, cfg, estimators)?);
        }
        Ok(out)
    })
}

fn benes_params(cfg: &ExperimentConfig) -> BenesParams<f64> {
    let b = &cfg.benes;
    BenesParams { mu: b.mu, sigma_w: b.sigma_w, h1: b.h1, h2: b.h2, x0: b.x0 }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// SIR, PIPF-zero and PIPF-iLQR on the Benes model, scored against the
/// analytic posterior. At each snapshot time every estimator's KDE is
/// compared with the analytic density on a grid around the analytic mean;
/// trial 0 also emits the densities themselves and, when
/// `benes.oracle_particles > 0`, a large-ensemble SIR reference (`sir-oracle`).
pub fn run_benes(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    require(cfg, Scenario::Benes)?;
    let grid = grid_of(cfg)?;
    let params = benes_params(cfg);
    let model = params.model(cfg.benes.prior_var).map_err(config_error)?;
    let sensor = params.sensor().map_err(config_error)?;
    let snap_at: Vec<usize> = cfg
        .benes
        .snapshot_times
        .iter()
        .map(|&t| cfg.snapshot_index(t).expect("validated"))
        .collect();
    let estimators = [
        Estimator::Sir,
        Estimator::Pipf { proposal: ProposalKind::Zero, horizon: cfg.horizon },
        Estimator::Pipf { proposal: proposal(cfg, Controller::Ilqr), horizon: cfg.horizon },
    ];
    over_trials(cfg.trials, |trial| {
        let stream = Stream::new(cfg.seed, trial as u64);
        let (_, record) = simulate_truth(&model, &sensor, &grid, stream)?;
        let series = benes_posterior_series(&params, &record, &grid)?;
        let mut oracle = vec![Moments {
            mean: DVector::from_element(1, params.x0),
            cov: DMatrix::zeros(1, 1),
        }];
        oracle.extend(series.iter().map(|p| Moments {
            mean: DVector::from_element(1, p.mean()),
            cov: DMatrix::from_element(1, 1, p.variance()),
        }));
        let mut out = RunOutput::default();
        let mut runs: Vec<(String, Track)> = Vec::new();
        for est in &estimators {
            let tr = track(est, &model, &sensor, &record, &grid, cfg, cfg.particles, stream, &snap_at)?;
            out.rows.extend(rows_from(trial, &est.tag(), &tr, &oracle, &grid)?);
            runs.push((est.tag(), tr));
        }
        if trial == 0 && cfg.benes.oracle_particles > 0 {
            let tr = track(&Estimator::Sir, &model, &sensor, &record, &grid, cfg, cfg.benes.oracle_particles, stream, &snap_at)?;
            runs.push(("sir-oracle".into(), tr));
        }
        for (i, &j) in snap_at.iter().enumerate() {
            let post = &series[j - 1];
            let time = grid.time(j);
            let hw = cfg.benes.grid_half_width;
            let xs = linspace(post.mean() - hw, post.mean() + hw, cfg.benes.grid_points);
            let analytic = benes_density(post, &xs)?;
            if trial == 0 {
                out.snapshots.extend(xs.iter().zip(analytic.values()).map(|(&x, &d)| SnapshotRow {
                    time,
                    x,
                    density: d,
                    source: "analytic".into(),
                }));
            }
            for (tag, tr) in &runs {
                let est = kde(&tr.snapshots[i], &xs, cfg.benes.bandwidth)?;
                out.distances.push(DistanceRow {
                    trial,
                    time,
                    estimator: tag.clone(),
                    l1: l1_density_distance(&est.density, &analytic)?,
                });
                if trial == 0 {
                    out.snapshots.extend(xs.iter().zip(est.density.values()).map(|(&x, &d)| SnapshotRow {
                        time,
                        x,
                        density: d,
                        source: format!("kde-{tag}"),
                    }));
                }
            }
        }
        Ok(out)
    })
}

/// Dispatches on the configured scenario (`ou` runs [`run_ou`]).
pub fn run_configured(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    match cfg.scenario {
        Scenario::Ou => run_ou(cfg),
        Scenario::LinearNd => run_linear_nd(cfg),
        Scenario::Benes => run_benes(cfg),
    }
}
