//! Finite-horizon affine LQ synthesis by backward Euler Riccati recursions.

use nalgebra::{DMatrix, DVector};

use super::{AffinePolicy, AffineValueFunction, Policy, PolicyKind};
use crate::error::{check_dim, PipfError, Result};
use crate::observation::{ObservationModel, ObservationRecord};
use crate::scalar::{lit, Real};
use crate::sde::{DiffusionModel, TimeGrid, Window};

/// Time-varying LQ problem on a window of `N` steps:
///
/// ```text
/// x_{j+1} = x_j + (A_j x_j + c_j)Δt + σ_j u_j Δt
/// cost    = Σ_j (½‖u_j‖² + ½x_jᵀQ_j x_j + lin_jᵀx_j) Δt
/// ```
///
/// All vectors are indexed by step offset `0..N` within the window.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLqProblem<T: Real> {
    pub start: usize,
    pub dt: T,
    pub a: Vec<DMatrix<T>>,
    pub c: Vec<DVector<T>>,
    pub sigma: Vec<DMatrix<T>>,
    pub q: Vec<DMatrix<T>>,
    pub lin: Vec<DVector<T>>,
}

impl<T: Real> AffineLqProblem<T> {
    pub fn steps(&self) -> usize {
        self.a.len()
    }

    /// Optimal feedback `u_j = −σ_jᵀ(P_j x + s_j)`.
    pub fn policy(&self, value: &AffineValueFunction<T>, kind: PolicyKind) -> Policy<T> {
        let (gains, offsets) = (0..self.steps())
            .map(|i| {
                let st = self.sigma[i].transpose();
                let j = self.start + i;
                (-(&st * value.p(j)), -(&st * value.s(j)))
            })
            .unzip();
        Policy::Affine(AffinePolicy::new(kind, self.start, gains, offsets))
    }
}

fn symmetrize<T: Real>(p: &mut DMatrix<T>) {
    let half = lit::<T>(0.5);
    let n = p.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let v = (p[(r, c)] + p[(c, r)]) * half;
            p[(r, c)] = v;
            p[(c, r)] = v;
        }
    }
}

/// Backward recursions
/// `P_{j} = P_{j+1} + Δt(AᵀP + PA − PσσᵀP + Q)` and
/// `s_{j} = s_{j+1} + Δt((A − σσᵀP)ᵀs + Pc + lin)`, evaluated at `j + 1`
/// with the data of step `j`, from `P = 0, s = 0` at the window end.
pub fn solve_affine_lq<T: Real>(problem: &AffineLqProblem<T>) -> Result<AffineValueFunction<T>> {
    let steps = problem.steps();
    if steps == 0 {
        return Err(PipfError::Usage("LQ problem has no steps".into()));
    }
    let n = problem.a[0].nrows();
    for (what, got) in [
        ("LQ offsets", problem.c.len()),
        ("LQ dispersions", problem.sigma.len()),
        ("LQ state weights", problem.q.len()),
        ("LQ linear weights", problem.lin.len()),
    ] {
        check_dim(what, steps, got)?;
    }
    let dt = problem.dt;
    let mut ps = vec![DMatrix::zeros(n, n); steps + 1];
    let mut ss = vec![DVector::zeros(n); steps + 1];
    for i in (0..steps).rev() {
        let (a, sig) = (&problem.a[i], &problem.sigma[i]);
        let p = &ps[i + 1];
        let s = &ss[i + 1];
        let sst = sig * sig.transpose();
        let ap = a.transpose() * p;
        let mut next = p + (&ap + ap.transpose() - p * &sst * p + &problem.q[i]) * dt;
        symmetrize(&mut next);
        let closed = a - &sst * p;
        let s_next = s + (closed.transpose() * s + p * &problem.c[i] + &problem.lin[i]) * dt;
        if next.iter().chain(s_next.iter()).any(|v| !v.is_finite()) {
            return Err(PipfError::Design(format!(
                "Riccati recursion diverged at step {}; try a smaller dt",
                problem.start + i
            )));
        }
        ps[i] = next;
        ss[i] = s_next;
    }
    Ok(AffineValueFunction::new(problem.start, ps, ss))
}

#[allow(clippy::too_many_arguments)]
fn linear_problem<T: Real>(
    a: &DMatrix<T>,
    sigma: &DMatrix<T>,
    c: &DMatrix<T>,
    offset: &DVector<T>,
    sigma_b: T,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
) -> Result<AffineLqProblem<T>> {
    let n = a.nrows();
    check_dim("drift matrix columns", n, a.ncols())?;
    check_dim("dispersion rows", n, sigma.nrows())?;
    check_dim("output matrix columns", n, c.ncols())?;
    check_dim("observation dimension", c.nrows(), record.obs_dim())?;
    window.check_on(grid)?;
    if window.end > record.steps() {
        return Err(PipfError::Usage("window extends past the observation record".into()));
    }
    if !(sigma_b > T::zero()) {
        return Err(PipfError::Model("σ_B must be positive".into()));
    }
    let dt = grid.dt();
    let inv_var = T::one() / (sigma_b * sigma_b);
    let q = c.transpose() * c * inv_var;
    let ct = c.transpose();
    let lin = (window.start..window.end)
        .map(|j| &ct * (offset * dt - record.dy(j)) * (inv_var / dt))
        .collect();
    let steps = window.len();
    Ok(AffineLqProblem {
        start: window.start,
        dt,
        a: vec![a.clone(); steps],
        c: vec![DVector::zeros(n); steps],
        sigma: vec![sigma.clone(); steps],
        q: vec![q; steps],
        lin,
    })
}

/// LQR proposal for `b(x) = Ax`, `h(x) = Cx` on `window`.
///
/// The measurement cost is taken in its `−Σ h·ΔY` form, giving the running
/// cost `½‖u‖² + ½xᵀQx − r_jᵀx` with `Q = CᵀC/σ_B²` and
/// `r_j = CᵀΔY_j/(σ_B²Δt)`, and no terminal cost.
#[allow(clippy::too_many_arguments)]
pub fn lqr_design<T: Real>(
    a: &DMatrix<T>,
    sigma: &DMatrix<T>,
    c: &DMatrix<T>,
    sigma_b: T,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
) -> Result<(Policy<T>, AffineValueFunction<T>)> {
    let offset = DVector::zeros(c.nrows());
    let problem = linear_problem(a, sigma, c, &offset, sigma_b, record, grid, window)?;
    let value = solve_affine_lq(&problem)?;
    Ok((problem.policy(&value, PolicyKind::Lqr), value))
}

/// [`lqr_design`] reading `A, σ, C, d` from models that expose linear parts.
pub fn lqr_design_for<T: Real, M, O>(
    model: &M,
    obs: &O,
    record: &ObservationRecord<T>,
    grid: &TimeGrid<T>,
    window: Window,
) -> Result<(Policy<T>, AffineValueFunction<T>)>
where
    M: DiffusionModel<T> + ?Sized,
    O: ObservationModel<T> + ?Sized,
{
    let (a, sigma) = model
        .linear_parts()
        .ok_or_else(|| PipfError::Usage("LQR proposal needs a linear diffusion model".into()))?;
    let (c, offset) = obs
        .linear_parts()
        .ok_or_else(|| PipfError::Usage("LQR proposal needs a linear sensor".into()))?;
    let problem = linear_problem(&a, &sigma, &c, &offset, obs.noise_scale(), record, grid, window)?;
    let value = solve_affine_lq(&problem)?;
    Ok((problem.policy(&value, PolicyKind::Lqr), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn cosine_record(grid: &TimeGrid<f64>) -> ObservationRecord<f64> {
        let inc = (0..grid.steps())
            .map(|j| DVector::from_element(1, grid.time(j).cos() * grid.dt()))
            .collect();
        ObservationRecord::from_increments(1, inc).unwrap()
    }

    #[test]
    fn blind_sensor_gives_zero_policy() {
        let grid = TimeGrid::new(0.0, 0.01, 50).unwrap();
        let record = cosine_record(&grid);
        let (policy, value) =
            lqr_design(&m(-1.0), &m(1.0), &m(0.0), 1.0, &record, &grid, Window::new(10, 50).unwrap()).unwrap();
        for j in 10..=50 {
            assert_eq!(value.p(j)[(0, 0)], 0.0);
            assert_eq!(value.s(j)[0], 0.0);
        }
        assert_eq!(policy.control(20, &DVector::from_element(1, 4.0))[0], 0.0);
    }

    #[test]
    fn riccati_reaches_stationary_root() {
        let grid = TimeGrid::new(0.0, 0.01, 3000).unwrap();
        let record = ObservationRecord::from_increments(1, vec![DVector::zeros(1); 3000]).unwrap();
        let (_, value) =
            lqr_design(&m(-1.0), &m(1.0), &m(1.0), 1.0, &record, &grid, Window::new(0, 3000).unwrap()).unwrap();
        assert_relative_eq!(value.p(0)[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-9);
        assert_eq!(value.p(3000)[(0, 0)], 0.0);
    }

    #[test]
    fn policy_is_exactly_affine_with_slope_minus_sigma_p() {
        let grid = TimeGrid::new(0.0, 0.01, 30).unwrap();
        let record = cosine_record(&grid);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 0.7]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let (policy, value) = lqr_design(&a, &sigma, &c, 0.5, &record, &grid, Window::new(0, 30).unwrap()).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        for j in [0, 11, 29] {
            let base = policy.control(j, &x0);
            for i in 0..2 {
                let mut e = DVector::zeros(2);
                e[i] = 1.0;
                let slope = policy.control(j, &(&x0 + &e)) - &base;
                let expected = -(sigma.transpose() * value.p(j)).column(i).clone_owned();
                assert!((slope - expected).amax() < 1e-12);
            }
        }
    }

    /// Finite-difference HJB residual of the quadratic value on a scalar
    /// problem with smooth observations. The constant term of `V` does not
    /// enter the policy, so it is integrated here alongside.
    fn hjb_residual(dt: f64) -> f64 {
        let (a, sig, cc, sb) = (-1.0, 1.0, 1.0, 1.0);
        let steps = (2.0 / dt).round() as usize;
        let grid = TimeGrid::new(0.0, dt, steps).unwrap();
        let record = cosine_record(&grid);
        let w = Window::new(0, steps).unwrap();
        let (_, value) = lqr_design(&m(a), &m(sig), &m(cc), sb, &record, &grid, w).unwrap();
        let q = cc * cc / (sb * sb);
        let lin = |j: usize| -cc * record.dy(j)[0] / (sb * sb * dt);
        let mut konst = vec![0.0; steps + 1];
        for j in (1..=steps).rev() {
            let (p, s) = (value.p(j)[(0, 0)], value.s(j)[0]);
            konst[j - 1] = konst[j] + dt * (0.5 * sig * sig * p - 0.5 * (sig * s).powi(2));
        }
        let v = |j: usize, x: f64| 0.5 * value.p(j)[(0, 0)] * x * x + value.s(j)[0] * x + konst[j];
        let mut worst: f64 = 0.0;
        for j in 1..steps - 1 {
            for x in [-1.5, -0.3, 0.0, 0.8, 2.0] {
                let (p, s) = (value.p(j)[(0, 0)], value.s(j)[0]);
                let grad = p * x + s;
                let dvdt = (v(j + 1, x) - v(j - 1, x)) / (2.0 * dt);
                let g = 0.5 * q * x * x + lin(j) * x;
                let r = dvdt + a * x * grad + g - 0.5 * (sig * grad).powi(2) + 0.5 * sig * sig * p;
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    #[test]
    fn hjb_residual_is_first_order() {
        let coarse = hjb_residual(0.01);
        let fine = hjb_residual(0.005);
        assert!(coarse < 5.0 * 0.01, "residual {coarse}");
        assert!(fine < 0.6 * coarse, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn rejects_non_linear_models() {
        let model = crate::sde::BenesSde::new(1.0, 1.0, crate::sde::GaussianPrior::isotropic(DVector::zeros(1), 1.0).unwrap()).unwrap();
        let obs = crate::observation::LinearSensor::identity(1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 5).unwrap();
        let record = cosine_record(&grid);
        let err = lqr_design_for(&model, &obs, &record, &grid, Window::new(0, 5).unwrap()).unwrap_err();
        assert!(matches!(err, PipfError::Usage(_)));
    }

    #[test]
    fn riccati_blowup_is_reported() {
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let record = cosine_record(&grid);
        let err = lqr_design(&m(0.0), &m(1.0), &m(1.0), 0.01, &record, &grid, Window::new(0, 200).unwrap());
        assert!(matches!(err, Err(PipfError::Design(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn riccati_stays_symmetric_psd(entries in proptest::collection::vec(-1.0f64..1.0, 12), sb in 0.3f64..2.0) {
            let a = DMatrix::from_row_slice(2, 2, &entries[0..4]) - DMatrix::identity(2, 2);
            let sigma = DMatrix::from_row_slice(2, 2, &entries[4..8]);
            let c = DMatrix::from_row_slice(2, 2, &entries[8..12]);
            let grid = TimeGrid::new(0.0, 0.01, 100).unwrap();
            let inc = (0..100).map(|j| DVector::from_vec(vec![(j as f64 * 0.1).sin() * 0.01, 0.002])).collect();
            let record = ObservationRecord::from_increments(2, inc).unwrap();
            let (_, value) = lqr_design(&a, &sigma, &c, sb, &record, &grid, Window::new(0, 100).unwrap()).unwrap();
            for j in 0..=100 {
                let p = value.p(j);
                prop_assert_eq!(p[(0, 1)], p[(1, 0)]);
                let eig = p.clone().symmetric_eigen();
                prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
            }
        }
    }
}
