//! Closed-form posterior of the Benes filter.
//!
//! Model: `dX = μσ_W tanh(μX/σ_W) dt + σ_W dW`, `X_0 = x₀`, and
//! `dY = (h₁X + h₁h₂) dt + dB`. The posterior at `t > 0` is the two-component
//! mixture `ω·N(a − b, σ²) + (1 − ω)·N(a + b, σ²)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{PipfError, Result};
use crate::metrics::GridDensity;
use crate::observation::{LinearSensor, ObservationRecord};
use crate::scalar::{lit, Real};
use crate::sde::{BenesSde, GaussianPrior, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenesParams<T> {
    pub mu: T,
    pub sigma_w: T,
    pub h1: T,
    pub h2: T,
    pub x0: T,
}

impl<T: Real> BenesParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > T::zero()) {
            return Err(PipfError::Model("Benes σ_W must be positive".into()));
        }
        if self.h1 == T::zero() {
            return Err(PipfError::Model("Benes h₁ must be nonzero".into()));
        }
        Ok(())
    }

    /// Diffusion with the point-mass start replaced by `N(x₀, prior_var)`.
    pub fn model(&self, prior_var: T) -> Result<BenesSde<T>> {
        self.validate()?;
        let prior = GaussianPrior::isotropic(DVector::from_element(1, self.x0), prior_var)?;
        BenesSde::new(self.mu, self.sigma_w, prior)
    }

    /// Unit-noise sensor `h(x) = h₁x + h₁h₂`.
    pub fn sensor(&self) -> Result<LinearSensor<T>> {
        LinearSensor::with_offset(
            DMatrix::from_element(1, 1, self.h1),
            DVector::from_element(1, self.h1 * self.h2),
            T::one(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenesPosterior<T> {
    /// Weight of the `a − b` component.
    pub omega: T,
    pub a: T,
    pub b: T,
    pub var: T,
    /// `Ψ_t = ∫ sinh(h₁σ_W s)/sinh(h₁σ_W t) dY_s`
    pub psi: T,
}

impl<T: Real> BenesPosterior<T> {
    pub fn mean(&self) -> T {
        self.a + self.b * (T::one() - (self.omega + self.omega))
    }

    pub fn variance(&self) -> T {
        let d = self.mean() - self.a;
        self.var + self.b * self.b - d * d
    }

    pub fn density_at(&self, x: T) -> T {
        let norm = T::one() / (T::two_pi() * self.var).sqrt();
        let g = |c: T| {
            let z = x - c;
            norm * (-(z * z) / (self.var + self.var)).exp()
        };
        self.omega * g(self.a - self.b) + (T::one() - self.omega) * g(self.a + self.b)
    }
}

/// `sinh(u)/sinh(v)` for `0 ≤ u ≤ v`, without overflow.
fn sinh_ratio<T: Real>(u: T, v: T) -> T {
    let two = lit::<T>(2.0);
    (u - v).exp() * (T::one() - (-two * u).exp()) / (T::one() - (-two * v).exp())
}

fn assemble<T: Real>(p: &BenesParams<T>, tau: T, psi: T) -> BenesPosterior<T> {
    let k = p.h1 * p.sigma_w;
    let th = (k * tau).tanh();
    let b = p.mu / p.h1 * th;
    let var = p.sigma_w / p.h1 * th;
    let a = p.sigma_w * psi * th + (p.h2 + p.x0) / (k * tau).cosh() - p.h2;
    let omega = T::one() / (T::one() + (lit::<T>(2.0) * a * b / var).exp());
    BenesPosterior { omega, a, b, var, psi }
}

fn check_record<T: Real>(record: &ObservationRecord<T>, j: usize) -> Result<()> {
    if record.obs_dim() != 1 {
        return Err(PipfError::Usage("Benes posterior needs a scalar record".into()));
    }
    if j == 0 {
        return Err(PipfError::Usage("Benes posterior is undefined at t = 0".into()));
    }
    if j > record.steps() {
        return Err(PipfError::Usage("time lies past the observation record".into()));
    }
    Ok(())
}

/// Posterior at grid index `j ≥ 1` (time `t_j − t_0`), with `Ψ` accumulated
/// by left-point sums over `ΔY_0 … ΔY_{j−1}`.
pub fn benes_posterior<T: Real>(
    params: &BenesParams<T>,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    j: usize,
) -> Result<BenesPosterior<T>> {
    params.validate()?;
    check_record(record, j)?;
    let k = (params.h1 * params.sigma_w).abs();
    let tau = lit::<T>(j as f64) * grid.dt();
    let psi = (0..j)
        .map(|s| sinh_ratio(k * lit::<T>(s as f64) * grid.dt(), k * tau) * record.dy(s)[0])
        .fold(T::zero(), |a, b| a + b);
    Ok(assemble(params, tau, psi))
}

/// Posterior at every grid index `1..=L` in one pass (entry `j − 1`).
pub fn benes_posterior_series<T: Real>(
    params: &BenesParams<T>,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
) -> Result<Vec<BenesPosterior<T>>> {
    params.validate()?;
    check_record(record, grid.steps())?;
    let k = (params.h1 * params.sigma_w).abs();
    let dt = grid.dt();
    let mut psi = T::zero();
    let mut out = Vec::with_capacity(grid.steps());
    for j in 0..grid.steps() {
        // Ψ_{j+1} = sinh(kτ_j)/sinh(kτ_{j+1}) · (Ψ_j + ΔY_j)
        let (u, v) = (k * lit::<T>(j as f64) * dt, k * lit::<T>((j + 1) as f64) * dt);
        psi = sinh_ratio(u, v) * (psi + record.dy(j)[0]);
        out.push(assemble(params, v / k, psi));
    }
    Ok(out)
}

/// Mixture density on `x_grid`.
pub fn benes_density<T: Real>(post: &BenesPosterior<T>, x_grid: &[T]) -> Result<GridDensity<T>> {
    if !(post.var > T::zero()) {
        return Err(PipfError::Usage("Benes variance must be positive".into()));
    }
    let density = x_grid.iter().map(|&x| post.density_at(x)).collect();
    GridDensity::new(x_grid.to_vec(), density)
}
