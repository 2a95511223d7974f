//! Observation model `dY = h(t, X) dt + σ_B dB`, synthetic records, and the
//! measurement-induced path cost.
//!
//! Over a window `[t_a, t_b]` the cost of a trajectory driven by control `u`
//! and noise `W` is
//!
//! ```text
//! S(t_a, t_b) = Σ_j [ ‖h_j‖²Δt / 2σ² + Ỹ_j·(h_{j+1} − h_j) / σ² + ½‖u_j‖²Δt + u_j·ΔW_j ]
//!               − Ỹ_b·h_b / σ²
//! ```
//!
//! with `Ỹ = Y − Y_a` (the record re-based at the window start). Summation by
//! parts turns the `Ỹ·dh` form into `−Σ h_{j+1}·ΔY_j / σ²`; both forms are
//! available through [`CostForm`].

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, PipfError, Result};
use crate::rng::{Lane, Stream};
use crate::scalar::{lit, Real};
use crate::sde::{StatePath, TimeGrid, Window};

/// Sensor function and noise scale.
pub trait ObservationModel<T: Real>: Send + Sync {
    /// Observation dimension `p`.
    fn obs_dim(&self) -> usize;

    fn state_dim(&self) -> usize;

    /// Writes `h(t, x)` into `out`.
    fn sensor(&self, t: T, x: &DVector<T>, out: &mut DVector<T>);

    /// Scalar measurement noise scale `σ_B > 0`.
    fn noise_scale(&self) -> T;

    /// `∂h/∂x`, central differences by default.
    fn sensor_jacobian(&self, t: T, x: &DVector<T>) -> DMatrix<T> {
        let (n, p) = (self.state_dim(), self.obs_dim());
        let mut jac = DMatrix::zeros(p, n);
        let mut plus = DVector::zeros(p);
        let mut minus = DVector::zeros(p);
        let mut probe = x.clone();
        let base_eps = T::default_epsilon().sqrt();
        for i in 0..n {
            let h = base_eps * (T::one() + x[i].abs());
            probe[i] = x[i] + h;
            self.sensor(t, &probe, &mut plus);
            probe[i] = x[i] - h;
            self.sensor(t, &probe, &mut minus);
            probe[i] = x[i];
            jac.set_column(i, &((&plus - &minus) / (h + h)));
        }
        jac
    }

    /// `(C, d)` when `h(t, x) = C x + d`.
    fn linear_parts(&self) -> Option<(DMatrix<T>, DVector<T>)> {
        None
    }

    fn sensor_at(&self, t: T, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.obs_dim());
        self.sensor(t, x, &mut out);
        out
    }
}

/// Affine sensor `h(x) = C x + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSensor<T: Real> {
    c: DMatrix<T>,
    offset: DVector<T>,
    sigma_b: T,
}

impl<T: Real> LinearSensor<T> {
    pub fn new(c: DMatrix<T>, sigma_b: T) -> Result<Self> {
        let p = c.nrows();
        Self::with_offset(c, DVector::zeros(p), sigma_b)
    }

    pub fn with_offset(c: DMatrix<T>, offset: DVector<T>, sigma_b: T) -> Result<Self> {
        check_dim("sensor offset", c.nrows(), offset.len())?;
        if !(sigma_b > T::zero()) || !sigma_b.is_finite() {
            return Err(PipfError::Model("σ_B must be positive and finite".into()));
        }
        Ok(Self { c, offset, sigma_b })
    }

    /// Scalar identity sensor `h(x) = x`.
    pub fn identity(sigma_b: T) -> Result<Self> {
        Self::new(DMatrix::identity(1, 1), sigma_b)
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn offset(&self) -> &DVector<T> {
        &self.offset
    }
}

impl<T: Real> ObservationModel<T> for LinearSensor<T> {
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    fn state_dim(&self) -> usize {
        self.c.ncols()
    }

    fn sensor(&self, _t: T, x: &DVector<T>, out: &mut DVector<T>) {
        out.copy_from(&self.offset);
        out.gemv(T::one(), &self.c, x, T::one());
    }

    fn noise_scale(&self) -> T {
        self.sigma_b
    }

    fn sensor_jacobian(&self, _t: T, _x: &DVector<T>) -> DMatrix<T> {
        self.c.clone()
    }

    fn linear_parts(&self) -> Option<(DMatrix<T>, DVector<T>)> {
        Some((self.c.clone(), self.offset.clone()))
    }
}

/// Cumulative measurements `Y_0 = 0, Y_1, …, Y_L` and their increments.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord<T: Real> {
    cumulative: Vec<DVector<T>>,
    increments: Vec<DVector<T>>,
}

impl<T: Real> ObservationRecord<T> {
    /// Builds the record by accumulating `ΔY_j` from `Y_0 = 0`.
    pub fn from_increments(obs_dim: usize, increments: Vec<DVector<T>>) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(increments.len() + 1);
        cumulative.push(DVector::zeros(obs_dim));
        for dy in &increments {
            check_dim("observation increment", obs_dim, dy.len())?;
            let next = cumulative.last().unwrap() + dy;
            cumulative.push(next);
        }
        Ok(Self {
            cumulative,
            increments,
        })
    }

    /// Builds the record from cumulative values; `Y_0` must be zero.
    pub fn from_cumulative(cumulative: Vec<DVector<T>>) -> Result<Self> {
        let first = cumulative
            .first()
            .ok_or_else(|| PipfError::Usage("empty observation record".into()))?;
        if first.iter().any(|v| *v != T::zero()) {
            return Err(PipfError::Usage("observation record must start at Y_0 = 0".into()));
        }
        let increments = cumulative.windows(2).map(|w| &w[1] - &w[0]).collect();
        Ok(Self {
            cumulative,
            increments,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.cumulative[0].len()
    }

    /// Number of increments `L`.
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// `Y_j`
    pub fn y(&self, j: usize) -> &DVector<T> {
        &self.cumulative[j]
    }

    /// `ΔY_j = Y_{j+1} − Y_j`
    pub fn dy(&self, j: usize) -> &DVector<T> {
        &self.increments[j]
    }

    pub fn increments(&self) -> &[DVector<T>] {
        &self.increments
    }

    /// Record with every increment multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let increments = self.increments.iter().map(|d| d * factor).collect();
        Self::from_increments(self.obs_dim(), increments).expect("dimensions unchanged")
    }
}

/// Simulates `ΔY_j = h(t_j, X_j)·Δt + σ_B·ΔB_j` along `truth`.
pub fn generate_observations<T: Real, O: ObservationModel<T> + ?Sized>(
    obs: &O,
    grid: &TimeGrid<T>,
    truth: &StatePath<T>,
    stream: Stream,
) -> Result<ObservationRecord<T>> {
    if truth.start() != 0 || truth.end() < grid.steps() {
        return Err(PipfError::Usage("truth path must cover the whole grid".into()));
    }
    check_dim("truth state", obs.state_dim(), truth.state(0).len())?;
    let p = obs.obs_dim();
    let dt = grid.dt();
    let key = stream.key(Lane::Observation, 0);
    let sigma_b = obs.noise_scale();
    let mut h = DVector::zeros(p);
    let mut increments = Vec::with_capacity(grid.steps());
    for j in 0..grid.steps() {
        obs.sensor(grid.time(j), truth.state(j), &mut h);
        let db: DVector<T> = key.normals(j, p, dt.sqrt());
        increments.push(&h * dt + db * sigma_b);
    }
    ObservationRecord::from_increments(p, increments)
}

/// Running measurement cost of one step,
/// `‖h(t_j,x_j)‖²Δt / 2σ² + Y_j·(h(t_{j+1},x_{j+1}) − h(t_j,x_j)) / σ²`.
pub fn running_cost_increment<T: Real, O: ObservationModel<T> + ?Sized>(
    obs: &O,
    y_j: &DVector<T>,
    t_j: T,
    x_j: &DVector<T>,
    x_next: &DVector<T>,
    dt: T,
) -> T {
    let inv_var = inv_var(obs);
    let h_j = obs.sensor_at(t_j, x_j);
    let h_next = obs.sensor_at(t_j + dt, x_next);
    lit::<T>(0.5) * h_j.norm_squared() * dt * inv_var + y_j.dot(&(h_next - h_j)) * inv_var
}

/// Terminal cost `Ψ(x) = −Y_end·h(t_end, x) / σ²`.
pub fn terminal_cost<T: Real, O: ObservationModel<T> + ?Sized>(
    obs: &O,
    y_end: &DVector<T>,
    t_end: T,
    x: &DVector<T>,
) -> T {
    -y_end.dot(&obs.sensor_at(t_end, x)) * inv_var(obs)
}

/// Log-likelihood increment of the transition `x_j → x_{j+1}` given `ΔY_j`,
/// `(h(t_{j+1},x_{j+1})·ΔY_j − ‖h(t_j,x_j)‖²Δt/2) / σ²`.
///
/// This is exactly `−` the zero-control path cost of one step, so bootstrap
/// filters weighted with it agree with the path cost to rounding error.
pub fn transition_log_likelihood<T: Real, O: ObservationModel<T> + ?Sized>(
    obs: &O,
    t_j: T,
    x_j: &DVector<T>,
    x_next: &DVector<T>,
    dy: &DVector<T>,
    dt: T,
) -> T {
    let h_j = obs.sensor_at(t_j, x_j);
    let h_next = obs.sensor_at(t_j + dt, x_next);
    (h_next.dot(dy) - lit::<T>(0.5) * h_j.norm_squared() * dt) * inv_var(obs)
}

/// Gaussian density `log N(ΔY; h(t,x)Δt, σ²Δt·I)`.
pub fn gaussian_log_likelihood<T: Real, O: ObservationModel<T> + ?Sized>(
    obs: &O,
    t: T,
    x: &DVector<T>,
    dy: &DVector<T>,
    dt: T,
) -> T {
    let var = obs.noise_scale() * obs.noise_scale() * dt;
    let resid = dy - obs.sensor_at(t, x) * dt;
    let p = lit::<T>(obs.obs_dim() as f64);
    -resid.norm_squared() / (var + var) - lit::<T>(0.5) * p * (T::two_pi() * var).ln()
}

fn inv_var<T: Real, O: ObservationModel<T> + ?Sized>(obs: &O) -> T {
    let s = obs.noise_scale();
    T::one() / (s * s)
}

/// Discretization of the measurement part of the path cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostForm {
    /// Left-point `Ỹ·dh` sums plus the terminal `−Ỹ·h / σ²`.
    #[default]
    YDh,
    /// `−Σ h_{j+1}·ΔY_j / σ²` without terminal term.
    HdY,
}

/// Streaming evaluation of the path cost, one step at a time.
#[derive(Debug, Clone)]
pub(crate) struct CostAccumulator<T: Real> {
    form: CostForm,
    inv_var: T,
    dt: T,
    base: DVector<T>,
    running: T,
}

impl<T: Real> CostAccumulator<T> {
    pub(crate) fn new(form: CostForm, sigma_b: T, dt: T, base: &DVector<T>) -> Self {
        Self {
            form,
            inv_var: T::one() / (sigma_b * sigma_b),
            dt,
            base: base.clone(),
            running: T::zero(),
        }
    }

    /// Measurement part of one step. `y_j` is cumulative; re-basing happens here.
    #[inline]
    pub(crate) fn add_measurement(
        &mut self,
        y_j: &DVector<T>,
        dy_j: &DVector<T>,
        h_j: &DVector<T>,
        h_next: &DVector<T>,
    ) {
        let half = lit::<T>(0.5);
        let quad = half * h_j.norm_squared() * self.dt;
        let cross = match self.form {
            CostForm::YDh => {
                let mut acc = T::zero();
                for i in 0..h_j.len() {
                    acc += (y_j[i] - self.base[i]) * (h_next[i] - h_j[i]);
                }
                acc
            }
            CostForm::HdY => -h_next.dot(dy_j),
        };
        self.running += (quad + cross) * self.inv_var;
    }

    /// Girsanov part of one step, `½‖u‖²Δt + u·ΔW`.
    #[inline]
    pub(crate) fn add_control(&mut self, u: &DVector<T>, dw: &DVector<T>) {
        self.running += lit::<T>(0.5) * u.norm_squared() * self.dt + u.dot(dw);
    }

    /// Cost from the window start up to grid point `c`, including `Ψ_c`.
    #[inline]
    pub(crate) fn partial(&self, y_c: &DVector<T>, h_c: &DVector<T>) -> T {
        match self.form {
            CostForm::YDh => {
                let mut acc = T::zero();
                for i in 0..h_c.len() {
                    acc += (y_c[i] - self.base[i]) * h_c[i];
                }
                self.running - acc * self.inv_var
            }
            CostForm::HdY => self.running,
        }
    }
}

/// Path cost of one trajectory over a window, with every prefix exposed.
///
/// `partial(c)` is `S(t_a, t_c)` including its own terminal term; the cost of
/// a later sub-interval re-based at its own start is the difference of two
/// prefixes (see [`PathCost::between`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PathCost<T: Real> {
    window: Window,
    partial: Vec<T>,
}

impl<T: Real> PathCost<T> {
    pub(crate) fn from_partials(window: Window, partial: Vec<T>) -> Self {
        debug_assert_eq!(partial.len(), window.len() + 1);
        Self { window, partial }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// `S(t_a, t_b)` over the whole window.
    pub fn total(&self) -> T {
        *self.partial.last().unwrap()
    }

    /// `S(t_a, t_c)`.
    pub fn partial(&self, c: usize) -> T {
        self.partial[c - self.window.start]
    }

    /// `S(t_b, t_c)` for the record re-based at `t_b`.
    ///
    /// Re-basing moves the intermediate terminal term and the `Y_b·dh`
    /// coupling into the same place, and the two cancel, so this is an exact
    /// difference of prefixes.
    pub fn between(&self, b: usize, c: usize) -> T {
        self.partial(c) - self.partial(b)
    }

    pub fn partials(&self) -> &[T] {
        &self.partial
    }
}

fn check_cover<T: Real>(path: &StatePath<T>, record: &ObservationRecord<T>, window: Window) -> Result<()> {
    if !path.covers(window) {
        return Err(PipfError::Usage(format!(
            "path [{}, {}] does not cover window [{}, {}]",
            path.start(),
            path.end(),
            window.start,
            window.end
        )));
    }
    if window.end > record.steps() {
        return Err(PipfError::Usage("window extends past the observation record".into()));
    }
    Ok(())
}

fn cost_over<T: Real, O: ObservationModel<T> + ?Sized>(
    path: &StatePath<T>,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
    form: CostForm,
    with_control: bool,
) -> Result<PathCost<T>> {
    window.check_on(grid)?;
    check_cover(path, record, window)?;
    let p = obs.obs_dim();
    let mut acc = CostAccumulator::new(form, obs.noise_scale(), grid.dt(), record.y(window.start));
    let mut h_j = obs.sensor_at(grid.time(window.start), path.state(window.start));
    let mut h_next = DVector::zeros(p);
    let mut partial = Vec::with_capacity(window.len() + 1);
    partial.push(acc.partial(record.y(window.start), &h_j));
    for j in window.start..window.end {
        obs.sensor(grid.time(j + 1), path.state(j + 1), &mut h_next);
        acc.add_measurement(record.y(j), record.dy(j), &h_j, &h_next);
        if with_control {
            acc.add_control(path.control(j), path.noise().increment(j));
        }
        partial.push(acc.partial(record.y(j + 1), &h_next));
        std::mem::swap(&mut h_j, &mut h_next);
    }
    Ok(PathCost::from_partials(window, partial))
}

/// Path cost `S^u` of `path` over `window` with the record re-based at the
/// window start.
pub fn window_cost<T: Real, O: ObservationModel<T> + ?Sized>(
    path: &StatePath<T>,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
    form: CostForm,
) -> Result<PathCost<T>> {
    cost_over(path, obs, record, grid, window, form, true)
}

/// Measurement-only part of [`window_cost`] (the negative log-likelihood of
/// the re-based record along the path, up to a path-independent constant).
pub fn measurement_cost<T: Real, O: ObservationModel<T> + ?Sized>(
    path: &StatePath<T>,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
    form: CostForm,
) -> Result<T> {
    Ok(cost_over(path, obs, record, grid, window, form, false)?.total())
}
