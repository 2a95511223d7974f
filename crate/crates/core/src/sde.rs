//! Continuous-time system models, time grids and the Euler–Maruyama simulator.
//!
//! The controlled diffusion
//!
//! ```text
//! dX = b(t, X) dt + σ(t, X) (u dt + dW)
//! ```
//!
//! is discretized on a uniform grid `t_j = t0 + j·Δt`. Noise increments are
//! drawn from counter-based streams (see [`crate::rng`]) so that any path can
//! be regenerated bit-for-bit from its key.

use nalgebra::{DMatrix, DVector};

use crate::control::Policy;
use crate::error::{check_dim, PipfError, Result};
use crate::rng::{Lane, Stream, StreamKey};
use crate::scalar::{lit, Real};

/// Uniform time grid with `steps + 1` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    t0: T,
    dt: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, dt: T, steps: usize) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(PipfError::Model("time step must be positive and finite".into()));
        }
        if steps == 0 {
            return Err(PipfError::Model("time grid needs at least one step".into()));
        }
        Ok(Self { t0, dt, steps })
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of steps `L`; the grid has `L + 1` points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Time of grid point `j`.
    pub fn time(&self, j: usize) -> T {
        self.t0 + lit::<T>(j as f64) * self.dt
    }

    pub fn points(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.steps).map(move |j| self.time(j))
    }

    /// Index of the grid point closest to `t`, if `t` lies on the grid
    /// within a relative tolerance of `1e-6·Δt`.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let pos = (t - self.t0) / self.dt;
        let j = pos.round();
        if j < T::zero() || (pos - j).abs() > lit(1e-6) {
            return None;
        }
        let j = crate::scalar::to_f64(j) as usize;
        (j <= self.steps).then_some(j)
    }
}

/// A closed range `[start, end]` of grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end <= start {
            return Err(PipfError::Usage(format!("empty window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    /// Number of steps in the window.
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, j: usize) -> bool {
        (self.start..=self.end).contains(&j)
    }

    pub(crate) fn check_on<T: Real>(&self, grid: &TimeGrid<T>) -> Result<()> {
        if self.end > grid.steps() {
            return Err(PipfError::Usage(format!(
                "window [{}, {}] exceeds grid of {} steps",
                self.start,
                self.end,
                grid.steps()
            )));
        }
        Ok(())
    }
}

/// Gaussian initial law `N(mean, cov)` with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    factor: DMatrix<T>,
}

impl<T: Real> GaussianPrior<T> {
    /// Fails unless `cov` is symmetric positive definite.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let n = mean.len();
        check_dim("prior covariance rows", n, cov.nrows())?;
        check_dim("prior covariance cols", n, cov.ncols())?;
        let asym = (&cov - cov.transpose()).amax();
        if asym > lit::<T>(1e-12) * (T::one() + cov.amax()) {
            return Err(PipfError::Model("prior covariance is not symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| PipfError::Model("prior covariance is not positive definite".into()))?;
        Ok(Self {
            mean,
            factor: chol.l(),
            cov,
        })
    }

    /// Isotropic prior `N(mean, variance·I)`.
    pub fn isotropic(mean: DVector<T>, variance: T) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps a standard normal vector to a draw from the prior.
    pub fn transform(&self, z: &DVector<T>) -> DVector<T> {
        &self.mean + &self.factor * z
    }
}

/// Drift, dispersion and initial law of `dX = b dt + σ (u dt + dW)`.
///
/// The drift and dispersion write into caller-provided buffers so the
/// simulator can run allocation-free inside particle loops.
pub trait DiffusionModel<T: Real>: Send + Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    /// Noise (and control) dimension `m`.
    fn noise_dim(&self) -> usize;

    /// Writes `b(t, x)` into `out` (length `n`).
    fn drift(&self, t: T, x: &DVector<T>, out: &mut DVector<T>);

    /// Writes `σ(t, x)` into `out` (`n × m`).
    fn dispersion(&self, t: T, x: &DVector<T>, out: &mut DMatrix<T>);

    fn prior(&self) -> &GaussianPrior<T>;

    /// `∂b/∂x` at `(t, x)`. Defaults to central finite differences.
    fn drift_jacobian(&self, t: T, x: &DVector<T>) -> DMatrix<T> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut plus = DVector::zeros(n);
        let mut minus = DVector::zeros(n);
        let mut probe = x.clone();
        let base_eps = T::default_epsilon().sqrt();
        for i in 0..n {
            let h = base_eps * (T::one() + x[i].abs());
            probe[i] = x[i] + h;
            self.drift(t, &probe, &mut plus);
            probe[i] = x[i] - h;
            self.drift(t, &probe, &mut minus);
            probe[i] = x[i];
            let col = (&plus - &minus) / (h + h);
            jac.set_column(i, &col);
        }
        jac
    }

    /// `(A, σ)` when the drift is `b(t, x) = A x` with constant `σ`.
    fn linear_parts(&self) -> Option<(DMatrix<T>, DMatrix<T>)> {
        None
    }

    /// Allocating convenience wrapper around [`DiffusionModel::drift`].
    fn drift_at(&self, t: T, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.state_dim());
        self.drift(t, x, &mut out);
        out
    }

    /// Allocating convenience wrapper around [`DiffusionModel::dispersion`].
    fn dispersion_at(&self, t: T, x: &DVector<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.state_dim(), self.noise_dim());
        self.dispersion(t, x, &mut out);
        out
    }
}

/// Linear time-invariant diffusion `dX = A X dt + σ (u dt + dW)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde<T: Real> {
    a: DMatrix<T>,
    sigma: DMatrix<T>,
    prior: GaussianPrior<T>,
}

impl<T: Real> LinearSde<T> {
    pub fn new(a: DMatrix<T>, sigma: DMatrix<T>, prior: GaussianPrior<T>) -> Result<Self> {
        let n = a.nrows();
        check_dim("drift matrix cols", n, a.ncols())?;
        check_dim("dispersion rows", n, sigma.nrows())?;
        check_dim("prior dimension", n, prior.dim())?;
        if sigma.ncols() == 0 {
            return Err(PipfError::Model("dispersion needs at least one noise channel".into()));
        }
        if a.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(PipfError::Model("non-finite model coefficient".into()));
        }
        Ok(Self { a, sigma, prior })
    }

    /// Scalar Ornstein–Uhlenbeck process `dX = −κ X dt + dW`.
    pub fn ornstein_uhlenbeck(kappa: T, m0: T, p0: T) -> Result<Self> {
        let prior = GaussianPrior::new(DVector::from_element(1, m0), DMatrix::from_element(1, 1, p0))?;
        Self::new(
            DMatrix::from_element(1, 1, -kappa),
            DMatrix::identity(1, 1),
            prior,
        )
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn sigma(&self) -> &DMatrix<T> {
        &self.sigma
    }
}

impl<T: Real> DiffusionModel<T> for LinearSde<T> {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    fn drift(&self, _t: T, x: &DVector<T>, out: &mut DVector<T>) {
        out.gemv(T::one(), &self.a, x, T::zero());
    }

    fn dispersion(&self, _t: T, _x: &DVector<T>, out: &mut DMatrix<T>) {
        out.copy_from(&self.sigma);
    }

    fn prior(&self) -> &GaussianPrior<T> {
        &self.prior
    }

    fn drift_jacobian(&self, _t: T, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }

    fn linear_parts(&self) -> Option<(DMatrix<T>, DMatrix<T>)> {
        Some((self.a.clone(), self.sigma.clone()))
    }
}

/// Scalar Benes diffusion `dX = μ σ_W tanh(μ X / σ_W) dt + σ_W dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenesSde<T: Real> {
    mu: T,
    sigma_w: T,
    prior: GaussianPrior<T>,
}

impl<T: Real> BenesSde<T> {
    pub fn new(mu: T, sigma_w: T, prior: GaussianPrior<T>) -> Result<Self> {
        if !(sigma_w > T::zero()) {
            return Err(PipfError::Model("Benes σ_W must be positive".into()));
        }
        check_dim("prior dimension", 1, prior.dim())?;
        Ok(Self { mu, sigma_w, prior })
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn sigma_w(&self) -> T {
        self.sigma_w
    }
}

impl<T: Real> DiffusionModel<T> for BenesSde<T> {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: T, x: &DVector<T>, out: &mut DVector<T>) {
        out[0] = self.mu * self.sigma_w * (self.mu / self.sigma_w * x[0]).tanh();
    }

    fn dispersion(&self, _t: T, _x: &DVector<T>, out: &mut DMatrix<T>) {
        out[(0, 0)] = self.sigma_w;
    }

    fn prior(&self) -> &GaussianPrior<T> {
        &self.prior
    }

    fn drift_jacobian(&self, _t: T, x: &DVector<T>) -> DMatrix<T> {
        let sech = T::one() / (self.mu / self.sigma_w * x[0]).cosh();
        DMatrix::from_element(1, 1, self.mu * self.mu * sech * sech)
    }
}

/// Brownian increments `ΔW_j ~ N(0, Δt·I)` for grid steps `start..start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath<T: Real> {
    start: usize,
    key: Option<StreamKey>,
    increments: Vec<DVector<T>>,
}

impl<T: Real> NoisePath<T> {
    /// Draws the increments from `key`; step `s` always uses draw index `s`.
    pub fn generate(key: StreamKey, start: usize, steps: usize, dim: usize, dt: T) -> Self {
        let scale = dt.sqrt();
        let increments = (start..start + steps)
            .map(|s| key.normals(s, dim, scale))
            .collect();
        Self {
            start,
            key: Some(key),
            increments,
        }
    }

    pub fn zeros(start: usize, steps: usize, dim: usize) -> Self {
        Self::from_increments(start, vec![DVector::zeros(dim); steps])
    }

    pub fn from_increments(start: usize, increments: Vec<DVector<T>>) -> Self {
        Self {
            start,
            key: None,
            increments,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn key(&self) -> Option<StreamKey> {
        self.key
    }

    /// Increment over `[t_j, t_{j+1}]` (global index `j`).
    pub fn increment(&self, j: usize) -> &DVector<T> {
        &self.increments[j - self.start]
    }

    pub fn increments(&self) -> &[DVector<T>] {
        &self.increments
    }
}

/// A simulated trajectory on grid indices `start..=start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath<T: Real> {
    start: usize,
    states: Vec<DVector<T>>,
    controls: Vec<DVector<T>>,
    noise: NoisePath<T>,
}

impl<T: Real> StatePath<T> {
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last grid index covered by the path.
    pub fn end(&self) -> usize {
        self.start + self.controls.len()
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    /// State at global grid index `j`.
    pub fn state(&self, j: usize) -> &DVector<T> {
        &self.states[j - self.start]
    }

    /// Control applied over `[t_j, t_{j+1}]`.
    pub fn control(&self, j: usize) -> &DVector<T> {
        &self.controls[j - self.start]
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn controls(&self) -> &[DVector<T>] {
        &self.controls
    }

    pub fn noise(&self) -> &NoisePath<T> {
        &self.noise
    }

    pub fn covers(&self, window: Window) -> bool {
        window.start >= self.start && window.end <= self.end()
    }
}

/// Reusable buffers for in-place Euler–Maruyama updates.
#[derive(Debug, Clone)]
pub(crate) struct EulerWorkspace<T: Real> {
    drift: DVector<T>,
    sigma: DMatrix<T>,
    forcing: DVector<T>,
}

impl<T: Real> EulerWorkspace<T> {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        Self {
            drift: DVector::zeros(n),
            sigma: DMatrix::zeros(n, m),
            forcing: DVector::zeros(m),
        }
    }

    /// `out = x + b(t,x)·dt + σ(t,x)·(u·dt + dW)`
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step<M: DiffusionModel<T> + ?Sized>(
        &mut self,
        model: &M,
        t: T,
        x: &DVector<T>,
        u: &DVector<T>,
        dw: &DVector<T>,
        dt: T,
        out: &mut DVector<T>,
    ) {
        model.drift(t, x, &mut self.drift);
        model.dispersion(t, x, &mut self.sigma);
        self.forcing.copy_from(dw);
        self.forcing.axpy(dt, u, T::one());
        out.copy_from(x);
        out.axpy(dt, &self.drift, T::one());
        out.gemv(T::one(), &self.sigma, &self.forcing, T::one());
    }
}

/// One Euler–Maruyama step `x + b(t,x)·dt + σ(t,x)·(u·dt + dW)`.
pub fn euler_maruyama_step<T: Real, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    t: T,
    x: &DVector<T>,
    u: &DVector<T>,
    dw: &DVector<T>,
    dt: T,
) -> Result<DVector<T>> {
    let (n, m) = (model.state_dim(), model.noise_dim());
    check_dim("state", n, x.len())?;
    check_dim("control", m, u.len())?;
    check_dim("noise increment", m, dw.len())?;
    if !(dt > T::zero()) {
        return Err(PipfError::Usage("dt must be positive".into()));
    }
    let mut ws = EulerWorkspace::new(n, m);
    let mut out = DVector::zeros(n);
    ws.step(model, t, x, u, dw, dt, &mut out);
    Ok(out)
}

/// Simulates the controlled dynamics from `x0` at grid index `noise.start()`
/// over `noise.len()` steps, recording `u_j = policy(t_j, X_j)`.
pub fn simulate_path<T: Real, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    grid: &TimeGrid<T>,
    policy: &Policy<T>,
    x0: &DVector<T>,
    noise: &NoisePath<T>,
) -> Result<StatePath<T>> {
    let (n, m) = (model.state_dim(), model.noise_dim());
    check_dim("initial state", n, x0.len())?;
    check_dim("policy control", m, policy.control_dim())?;
    let start = noise.start();
    if start + noise.len() > grid.steps() {
        return Err(PipfError::Usage(format!(
            "noise path [{start}, {}] exceeds grid of {} steps",
            start + noise.len(),
            grid.steps()
        )));
    }
    if let Some(dw) = noise.increments().first() {
        check_dim("noise increment", m, dw.len())?;
    }
    let dt = grid.dt();
    let mut ws = EulerWorkspace::new(n, m);
    let mut states = Vec::with_capacity(noise.len() + 1);
    let mut controls = Vec::with_capacity(noise.len());
    states.push(x0.clone());
    let mut u = DVector::zeros(m);
    for (offset, dw) in noise.increments().iter().enumerate() {
        let j = start + offset;
        let x = &states[offset];
        policy.control_into(j, x, &mut u);
        let mut next = DVector::zeros(n);
        ws.step(model, grid.time(j), x, &u, dw, dt, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PipfError::SimulationBlowup { step: j + 1 });
        }
        controls.push(u.clone());
        states.push(next);
    }
    Ok(StatePath {
        start,
        states,
        controls,
        noise: noise.clone(),
    })
}

/// `count` i.i.d. draws from the model prior, one per column.
pub fn sample_initial<T: Real, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    count: usize,
    stream: Stream,
) -> Result<DMatrix<T>> {
    if count == 0 {
        return Err(PipfError::Usage("need at least one particle".into()));
    }
    let prior = model.prior();
    let n = prior.dim();
    let mut out = DMatrix::zeros(n, count);
    for k in 0..count {
        let z = stream.key(Lane::Initial, k).normals(0, n, T::one());
        out.set_column(k, &prior.transform(&z));
    }
    Ok(out)
}
