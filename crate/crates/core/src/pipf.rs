//! Path integral particle filter: sliding-window smoothing with controlled
//! proposals, recursive prior update and effective-ratio-triggered resampling.
//!
//! Weights are carried as log-weights throughout and only exponentiated
//! after a log-sum-exp shift.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::{ilqr_design, lqr_design_for, IlqrConfig, Policy};
use crate::error::{check_dim, PipfError, Result};
use crate::observation::{window_cost, CostAccumulator, CostForm, ObservationModel, ObservationRecord};
use crate::rng::{Lane, Stream, StreamKey};
use crate::scalar::{lit, log_sum_exp, pairwise_sum, Real};
use crate::sde::{sample_initial, simulate_path, DiffusionModel, EulerWorkspace, NoisePath, StatePath, TimeGrid, Window};

/// Particles (one per column) with normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble<T: Real> {
    particles: DMatrix<T>,
    weights: Vec<T>,
}

impl<T: Real> WeightedEnsemble<T> {
    /// Normalizes nonnegative `weights`.
    pub fn new(particles: DMatrix<T>, weights: Vec<T>) -> Result<Self> {
        check_dim("ensemble weights", particles.ncols(), weights.len())?;
        if weights.is_empty() {
            return Err(PipfError::Usage("ensemble needs at least one particle".into()));
        }
        if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(PipfError::DegenerateWeights("negative or non-finite weight".into()));
        }
        let total = pairwise_sum(&weights);
        if !(total > T::zero()) {
            return Err(PipfError::DegenerateWeights("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: DMatrix<T>) -> Result<Self> {
        let k = particles.ncols();
        Self::new(particles, vec![T::one(); k])
    }

    pub fn from_log_weights(particles: DMatrix<T>, log_weights: &[T]) -> Result<Self> {
        check_dim("ensemble log-weights", particles.ncols(), log_weights.len())?;
        let weights = normalize_log_weights(log_weights)?;
        Ok(Self { particles, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    /// `n × K` matrix of particles.
    pub fn particles(&self) -> &DMatrix<T> {
        &self.particles
    }

    pub fn particle(&self, k: usize) -> DVector<T> {
        self.particles.column(k).clone_owned()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn effective_ratio(&self) -> T {
        effective_ratio(&self.weights).expect("normalized weights are never all zero")
    }

    pub fn weighted_mean(&self) -> DVector<T> {
        weighted_mean(&self.particles, &self.weights)
    }
}

fn weighted_mean<T: Real>(particles: &DMatrix<T>, weights: &[T]) -> DVector<T> {
    let mut mean = DVector::zeros(particles.nrows());
    for (k, w) in weights.iter().enumerate() {
        mean.axpy(*w, &particles.column(k), T::one());
    }
    mean
}

/// `exp(l_k − log Σ exp l)`.
pub fn normalize_log_weights<T: Real>(log_weights: &[T]) -> Result<Vec<T>> {
    if log_weights.is_empty() {
        return Err(PipfError::Usage("no weights to normalize".into()));
    }
    let neg_inf = lit::<T>(f64::NEG_INFINITY);
    if log_weights.iter().any(|l| !l.is_finite() && *l != neg_inf) {
        return Err(PipfError::DegenerateWeights("log-weight is NaN or +inf".into()));
    }
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(PipfError::DegenerateWeights("every log-weight is -inf".into()));
    }
    let w: Vec<T> = log_weights.iter().map(|&l| (l - lse).exp()).collect();
    let total = pairwise_sum(&w);
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// `γ = 1 / (K Σ w_k²)` for normalized weights.
pub fn effective_ratio<T: Real>(weights: &[T]) -> Result<T> {
    let squares: Vec<T> = weights.iter().map(|w| *w * *w).collect();
    let sum_sq = pairwise_sum(&squares);
    if !(sum_sq > T::zero()) {
        return Err(PipfError::DegenerateWeights("all weights are zero".into()));
    }
    Ok(T::one() / (lit::<T>(weights.len() as f64) * sum_sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
}

fn cumulative<T: Real>(weights: &[T]) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(weights.len());
    for w in weights {
        let w = crate::scalar::to_f64(*w);
        if !(w >= 0.0) || !w.is_finite() {
            return Err(PipfError::DegenerateWeights("resampling weight is negative or non-finite".into()));
        }
        acc += w;
        out.push(acc);
    }
    if !(acc > 0.0) {
        return Err(PipfError::DegenerateWeights("resampling weights sum to zero".into()));
    }
    Ok(out)
}

fn pick(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

/// `count` i.i.d. ancestor indices drawn with probabilities proportional to `weights`.
pub fn multinomial_ancestors<T: Real>(weights: &[T], count: usize, key: StreamKey) -> Result<Vec<usize>> {
    use rand::Rng;
    let cum = cumulative(weights)?;
    let mut rng = key.rng(0);
    Ok((0..count).map(|_| pick(&cum, rng.random::<f64>())).collect())
}

/// Systematic (single-uniform, stratified) ancestor indices.
pub fn systematic_ancestors<T: Real>(weights: &[T], count: usize, key: StreamKey) -> Result<Vec<usize>> {
    let cum = cumulative(weights)?;
    let u0 = key.uniform(0);
    Ok((0..count)
        .map(|i| pick(&cum, (i as f64 + u0) / count as f64))
        .collect())
}

pub fn resample_ancestors<T: Real>(
    scheme: ResamplingScheme,
    weights: &[T],
    count: usize,
    key: StreamKey,
) -> Result<Vec<usize>> {
    match scheme {
        ResamplingScheme::Multinomial => multinomial_ancestors(weights, count, key),
        ResamplingScheme::Systematic => systematic_ancestors(weights, count, key),
    }
}

/// Draws `K` particles from `ensemble` with probabilities proportional to
/// `resample_weights`.
pub fn multinomial_resample<T: Real>(
    ensemble: &WeightedEnsemble<T>,
    resample_weights: &[T],
    key: StreamKey,
) -> Result<DMatrix<T>> {
    check_dim("resampling weights", ensemble.len(), resample_weights.len())?;
    let ancestors = multinomial_ancestors(resample_weights, ensemble.len(), key)?;
    Ok(ensemble.particles.select_columns(&ancestors))
}

/// Proposal controller used inside each window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ProposalKind {
    #[default]
    Zero,
    Lqr,
    Ilqr(IlqrConfig),
}

impl ProposalKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ProposalKind::Zero => "zero",
            ProposalKind::Lqr => "lqr",
            ProposalKind::Ilqr(_) => "ilqr",
        }
    }
}

/// Builds the proposal for `window`; `x_init` seeds the iLQR nominal.
pub fn design_policy<T: Real, M, O>(
    kind: &ProposalKind,
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
    x_init: &DVector<T>,
) -> Result<Policy<T>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    match kind {
        ProposalKind::Zero => Ok(Policy::zero(model.noise_dim())),
        ProposalKind::Lqr => Ok(lqr_design_for(model, obs, record, grid, window)?.0),
        ProposalKind::Ilqr(cfg) => Ok(ilqr_design(model, obs, record, grid, window, x_init, cfg)?.policy),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipfConfig {
    /// Number of particles `K`.
    pub particles: usize,
    /// Window length `H` in steps.
    pub horizon: usize,
    pub proposal: ProposalKind,
    pub gamma_thres: f64,
    pub resampling: bool,
    pub scheme: ResamplingScheme,
    pub cost_form: CostForm,
}

impl Default for PipfConfig {
    fn default() -> Self {
        Self {
            particles: 500,
            horizon: 20,
            proposal: ProposalKind::Zero,
            gamma_thres: 0.5,
            resampling: true,
            scheme: ResamplingScheme::Multinomial,
            cost_form: CostForm::YDh,
        }
    }
}

impl PipfConfig {
    fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.horizon == 0 {
            return Err(PipfError::Usage("K and H must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma_thres) {
            return Err(PipfError::Usage("gamma_thres must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Posterior approximation emitted at one grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput<T: Real> {
    pub step: usize,
    pub time: T,
    pub ensemble: WeightedEnsemble<T>,
    /// Normalized log-weights `log ŵ_k`.
    pub log_weights: Vec<T>,
    pub effective_ratio: T,
    pub resampled: bool,
}

/// Per-particle costs of the last processed window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCosts<T: Real> {
    pub window: Window,
    /// `S_k(t_i, t_j)`
    pub full: Vec<T>,
    /// `S_k(t_i, t_{i+1})`
    pub head: Vec<T>,
    /// Ancestor of each new prior particle when the step resampled.
    pub ancestors: Option<Vec<usize>>,
}

impl<T: Real> WindowCosts<T> {
    /// `S_k(t_{i+1}, t_j)` with the record re-based at `t_{i+1}`.
    pub fn tail(&self, k: usize) -> T {
        self.full[k] - self.head[k]
    }
}

/// Prior ensemble `{X_p, w_p}` at the start of the next window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState<T: Real> {
    /// Grid index the prior particles live at.
    pub index: usize,
    pub particles: DMatrix<T>,
    pub log_weights: Vec<T>,
    pub last: Option<WindowCosts<T>>,
}

impl<T: Real> WindowState<T> {
    pub fn from_particles(index: usize, particles: DMatrix<T>) -> Self {
        let k = particles.ncols();
        Self {
            index,
            particles,
            log_weights: vec![T::zero(); k],
            last: None,
        }
    }

    fn weighted_mean(&self) -> Result<DVector<T>> {
        Ok(weighted_mean(&self.particles, &normalize_log_weights(&self.log_weights)?))
    }
}

struct Rollout<T: Real> {
    head_state: DVector<T>,
    end_state: DVector<T>,
    head: T,
    full: T,
}

/// Simulates one particle over `window` streaming its path cost.
#[allow(clippy::too_many_arguments)]
fn rollout<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    policy: &Policy<T>,
    window: Window,
    x0: DVector<T>,
    key: StreamKey,
    form: CostForm,
) -> Result<Rollout<T>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    let (n, m, p) = (model.state_dim(), model.noise_dim(), obs.obs_dim());
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut ws = EulerWorkspace::new(n, m);
    let mut acc = CostAccumulator::new(form, obs.noise_scale(), dt, record.y(window.start));
    let (mut x, mut next) = (x0, DVector::zeros(n));
    let (mut u, mut dw) = (DVector::zeros(m), DVector::zeros(m));
    let (mut h, mut h_next) = (DVector::zeros(p), DVector::zeros(p));
    obs.sensor(grid.time(window.start), &x, &mut h);
    let mut head = None;
    for s in window.start..window.end {
        key.fill_normals(s, sqrt_dt, &mut dw);
        policy.control_into(s, &x, &mut u);
        ws.step(model, grid.time(s), &x, &u, &dw, dt, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PipfError::SimulationBlowup { step: s + 1 });
        }
        obs.sensor(grid.time(s + 1), &next, &mut h_next);
        acc.add_measurement(record.y(s), record.dy(s), &h, &h_next);
        acc.add_control(&u, &dw);
        if s == window.start {
            head = Some((next.clone(), acc.partial(record.y(s + 1), &h_next)));
        }
        std::mem::swap(&mut x, &mut next);
        std::mem::swap(&mut h, &mut h_next);
    }
    let (head_state, head) = head.expect("window has at least one step");
    Ok(Rollout {
        head_state,
        end_state: x,
        head,
        full: acc.partial(record.y(window.end), &h),
    })
}

fn check_inputs<T: Real, M, O>(model: &M, obs: &O, record: &ObservationRecord<T>, grid: &TimeGrid<T>) -> Result<()>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    check_dim("sensor state dimension", model.state_dim(), obs.state_dim())?;
    check_dim("record dimension", obs.obs_dim(), record.obs_dim())?;
    if record.steps() < grid.steps() {
        return Err(PipfError::Usage("observation record shorter than the grid".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn window_step_inner<T: Real, M, O>(
    state: &WindowState<T>,
    window: Window,
    advance: bool,
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    config: &PipfConfig,
    stream: Stream,
) -> Result<(FilterOutput<T>, WindowState<T>)>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    if window.start != state.index {
        return Err(PipfError::Usage(format!(
            "window starts at {} but the prior lives at {}",
            window.start, state.index
        )));
    }
    window.check_on(grid)?;
    let x_init = state.weighted_mean()?;
    let policy = design_policy(&config.proposal, model, obs, record, grid, window, &x_init)?;
    let k_count = state.particles.ncols();
    let rollouts: Vec<Rollout<T>> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let key = stream.key(Lane::Window(window.end), k);
            let x0 = state.particles.column(k).clone_owned();
            rollout(model, obs, record, grid, &policy, window, x0, key, config.cost_form)
        })
        .collect::<Result<_>>()?;

    let filter_log: Vec<T> = state
        .log_weights
        .iter()
        .zip(&rollouts)
        .map(|(lw, r)| *lw - r.full)
        .collect();
    let weights = normalize_log_weights(&filter_log)?;
    let gamma = effective_ratio(&weights)?;
    let lse = log_sum_exp(&filter_log);
    let log_weights = filter_log.iter().map(|&l| l - lse).collect();
    let n = state.particles.nrows();
    let mut end = DMatrix::zeros(n, k_count);
    for (k, r) in rollouts.iter().enumerate() {
        end.set_column(k, &r.end_state);
    }
    let ensemble = WeightedEnsemble {
        particles: end,
        weights: weights.clone(),
    };

    let mut resampled = false;
    let next_state = if advance {
        let full: Vec<T> = rollouts.iter().map(|r| r.full).collect();
        let head: Vec<T> = rollouts.iter().map(|r| r.head).collect();
        let mut costs = WindowCosts {
            window,
            full,
            head,
            ancestors: None,
        };
        let mut particles = DMatrix::zeros(n, k_count);
        let mut prior_log: Vec<T>;
        if config.resampling && crate::scalar::to_f64(gamma) < config.gamma_thres {
            let key = stream.key(Lane::Resample(window.end), 0);
            let ancestors = resample_ancestors(config.scheme, &weights, k_count, key)?;
            prior_log = Vec::with_capacity(k_count);
            for (k, &a) in ancestors.iter().enumerate() {
                particles.set_column(k, &rollouts[a].head_state);
                prior_log.push(costs.tail(a));
            }
            costs.ancestors = Some(ancestors);
            resampled = true;
        } else {
            for (k, r) in rollouts.iter().enumerate() {
                particles.set_column(k, &r.head_state);
            }
            prior_log = state.log_weights.iter().zip(&costs.head).map(|(lw, h)| *lw - *h).collect();
        }
        let shift = prior_log.iter().copied().fold(lit::<T>(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
        if shift.is_finite() {
            prior_log.iter_mut().for_each(|l| *l -= shift);
        }
        WindowState {
            index: window.start + 1,
            particles,
            log_weights: prior_log,
            last: Some(costs),
        }
    } else {
        state.clone()
    };

    Ok((
        FilterOutput {
            step: window.end,
            time: grid.time(window.end),
            ensemble,
            log_weights,
            effective_ratio: gamma,
            resampled,
        },
        next_state,
    ))
}

/// One sliding-window step on `window = [t_i, t_j]` from the prior at `t_i`.
///
/// Emits the filtering ensemble at `t_j` with weights `∝ w_p exp(−S(t_i, t_j))`
/// and returns the prior at `t_{i+1}`: either `w_p exp(−S(t_i, t_{i+1}))`, or,
/// when `γ` falls below the threshold, resampled particles with log-weights
/// `+S(t_{i+1}, t_j)` of their ancestors.
#[allow(clippy::too_many_arguments)]
pub fn pipf_window_step<T: Real, M, O>(
    state: &WindowState<T>,
    window: Window,
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    config: &PipfConfig,
    stream: Stream,
) -> Result<(FilterOutput<T>, WindowState<T>)>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    config.validate()?;
    check_inputs(model, obs, record, grid)?;
    window_step_inner(state, window, true, model, obs, record, grid, config, stream)
}

/// Streaming driver: yields the prior at step 0, then one output per grid step.
pub struct PipfFilter<'a, T: Real, M: ?Sized, O: ?Sized> {
    model: &'a M,
    obs: &'a O,
    record: &'a ObservationRecord<T>,
    grid: &'a TimeGrid<T>,
    config: PipfConfig,
    stream: Stream,
    state: WindowState<T>,
    next: usize,
    failed: bool,
}

impl<'a, T: Real, M, O> PipfFilter<'a, T, M, O>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    pub fn new(
        model: &'a M,
        obs: &'a O,
        record: &'a ObservationRecord<T>,
        grid: &'a TimeGrid<T>,
        config: PipfConfig,
        stream: Stream,
    ) -> Result<Self> {
        config.validate()?;
        check_inputs(model, obs, record, grid)?;
        let particles = sample_initial(model, config.particles, stream)?;
        Ok(Self {
            model,
            obs,
            record,
            grid,
            config,
            stream,
            state: WindowState::from_particles(0, particles),
            next: 0,
            failed: false,
        })
    }

    /// Current prior bookkeeping.
    pub fn state(&self) -> &WindowState<T> {
        &self.state
    }

    /// Processes the next grid step, or returns `None` past the last one.
    pub fn step(&mut self) -> Result<Option<FilterOutput<T>>> {
        let j = self.next;
        if j > self.grid.steps() || self.failed {
            return Ok(None);
        }
        self.next += 1;
        if j == 0 {
            let ensemble = WeightedEnsemble::uniform(self.state.particles.clone())?;
            let k = ensemble.len();
            let log_uniform = -lit::<T>(k as f64).ln();
            return Ok(Some(FilterOutput {
                step: 0,
                time: self.grid.time(0),
                ensemble,
                log_weights: vec![log_uniform; k],
                effective_ratio: T::one(),
                resampled: false,
            }));
        }
        let h = self.config.horizon;
        let (window, advance) = if j < h {
            (Window::new(0, j)?, false)
        } else {
            (Window::new(j - h, j)?, true)
        };
        let result = window_step_inner(
            &self.state,
            window,
            advance,
            self.model,
            self.obs,
            self.record,
            self.grid,
            &self.config,
            self.stream,
        );
        match result {
            Ok((out, next)) => {
                self.state = next;
                Ok(Some(out))
            }
            Err(e) => {
                self.failed = true;
                Err(e)
            }
        }
    }
}

impl<T: Real, M, O> Iterator for PipfFilter<'_, T, M, O>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    type Item = Result<FilterOutput<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.step().transpose()
    }
}

/// Runs the filter over the whole grid; returns `L + 1` outputs, the first
/// being the initial prior sample.
///
/// Steps `j < H` smooth over the growing window `[0, t_j]` from the initial
/// prior; from `j = H` on the window slides and the prior is updated.
pub fn pipf_run<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    config: PipfConfig,
    stream: Stream,
) -> Result<Vec<FilterOutput<T>>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    PipfFilter::new(model, obs, record, grid, config, stream)?.collect()
}

/// Weighted full trajectories over a smoothing window.
#[derive(Debug, Clone)]
pub struct PathEnsemble<T: Real> {
    pub paths: Vec<StatePath<T>>,
    /// Unnormalized `log(dν₀/dπ₀) − S`.
    pub log_weights: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> PathEnsemble<T> {
    /// Weighted marginal at grid index `j`.
    pub fn marginal(&self, j: usize) -> WeightedEnsemble<T> {
        let n = self.paths[0].state(j).len();
        let mut particles = DMatrix::zeros(n, self.paths.len());
        for (k, p) in self.paths.iter().enumerate() {
            particles.set_column(k, p.state(j));
        }
        WeightedEnsemble {
            particles,
            weights: self.weights.clone(),
        }
    }

    pub fn effective_ratio(&self) -> T {
        effective_ratio(&self.weights).expect("normalized weights")
    }
}

/// Smoothing posterior from explicit initial particles drawn from a proposal
/// `π₀`, with `log_prior_ratio[k] = log dν₀/dπ₀(X_0^k)`.
#[allow(clippy::too_many_arguments)]
pub fn smoothing_posterior_from<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
    initial: &DMatrix<T>,
    log_prior_ratio: &[T],
    policy: &Policy<T>,
    form: CostForm,
    stream: Stream,
) -> Result<PathEnsemble<T>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    check_inputs(model, obs, record, grid)?;
    check_dim("prior ratios", initial.ncols(), log_prior_ratio.len())?;
    window.check_on(grid)?;
    let (m, dt) = (model.noise_dim(), grid.dt());
    let scored: Vec<(StatePath<T>, T)> = (0..initial.ncols())
        .into_par_iter()
        .map(|k| {
            let noise = NoisePath::generate(stream.key(Lane::Window(window.end), k), window.start, window.len(), m, dt);
            let x0 = initial.column(k).clone_owned();
            let path = simulate_path(model, grid, policy, &x0, &noise)?;
            let cost = window_cost(&path, obs, record, grid, window, form)?;
            Ok((path, log_prior_ratio[k] - cost.total()))
        })
        .collect::<Result<_>>()?;
    let (paths, log_weights): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let weights = normalize_log_weights(&log_weights)?;
    Ok(PathEnsemble {
        paths,
        log_weights,
        weights,
    })
}

/// Smoothing posterior over `[0, t_end]` with `K` particles started from the
/// model prior (`dν₀/dπ₀ = 1`).
#[allow(clippy::too_many_arguments)]
pub fn smoothing_posterior<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    particles: usize,
    policy: &Policy<T>,
    end: usize,
    stream: Stream,
) -> Result<PathEnsemble<T>>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    let initial = sample_initial(model, particles, stream)?;
    let zeros = vec![T::zero(); particles];
    smoothing_posterior_from(model, obs, record, grid, Window::new(0, end)?, &initial, &zeros, policy, CostForm::YDh, stream)
}
