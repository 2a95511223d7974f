//! Ensemble statistics, error series against oracles, and density estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, PipfError, Result};
use crate::pipf::WeightedEnsemble;
use crate::scalar::{lit, Real};

/// Mean and covariance of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

/// Weighted mean and (biased) weighted covariance.
pub fn ensemble_moments<T: Real>(ensemble: &WeightedEnsemble<T>) -> Moments<T> {
    let mean = ensemble.weighted_mean();
    let n = ensemble.dim();
    let mut cov = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for (k, w) in ensemble.weights().iter().enumerate() {
        d.copy_from(&ensemble.particles().column(k));
        d -= &mean;
        cov.ger(*w, &d, &d, T::one());
    }
    let half = lit::<T>(0.5);
    cov = (&cov + cov.transpose()) * half;
    Moments { mean, cov }
}

/// Per-step scores of one estimator on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries<T> {
    pub mse_mean: Vec<T>,
    pub mse_cov: Vec<T>,
    pub effective_ratio: Vec<T>,
    pub resampled: Vec<bool>,
}

impl<T> MetricSeries<T> {
    pub fn len(&self) -> usize {
        self.mse_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mse_mean.is_empty()
    }
}

/// Squared Euclidean error of means and squared Frobenius error of
/// covariances, step by step.
pub fn mse_series<T: Real>(
    estimates: &[Moments<T>],
    oracle: &[Moments<T>],
    effective_ratio: &[T],
    resampled: &[bool],
) -> Result<MetricSeries<T>> {
    let len = estimates.len();
    for (what, got) in [
        ("oracle steps", oracle.len()),
        ("effective ratios", effective_ratio.len()),
        ("resampling flags", resampled.len()),
    ] {
        if got != len {
            return Err(PipfError::Usage(format!("{what}: expected {len}, got {got}")));
        }
    }
    let mut mse_mean = Vec::with_capacity(len);
    let mut mse_cov = Vec::with_capacity(len);
    for (e, o) in estimates.iter().zip(oracle) {
        check_dim("oracle mean", e.mean.len(), o.mean.len())?;
        mse_mean.push((&e.mean - &o.mean).norm_squared());
        mse_cov.push((&e.cov - &o.cov).norm_squared());
    }
    Ok(MetricSeries {
        mse_mean,
        mse_cov,
        effective_ratio: effective_ratio.to_vec(),
        resampled: resampled.to_vec(),
    })
}

/// Trapezoid rule on a (possibly non-uniform) grid.
pub fn trapezoid<T: Real>(x: &[T], y: &[T]) -> T {
    let half = lit::<T>(0.5);
    x.windows(2)
        .zip(y.windows(2))
        .fold(T::zero(), |acc, (xs, ys)| acc + (xs[1] - xs[0]) * (ys[0] + ys[1]) * half)
}

/// Density values on a grid of points.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity<T> {
    grid: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> GridDensity<T> {
    pub fn new(grid: Vec<T>, values: Vec<T>) -> Result<Self> {
        check_dim("density values", grid.len(), values.len())?;
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PipfError::Usage("density grid must be strictly increasing".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn integral(&self) -> T {
        trapezoid(&self.grid, &self.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeEstimate<T> {
    pub density: GridDensity<T>,
    pub bandwidth: T,
}

/// Weighted Gaussian kernel density `Σ ŵ_k N(x; X_k, bandwidth²)` of a
/// scalar ensemble.
pub fn kde<T: Real>(ensemble: &WeightedEnsemble<T>, grid: &[T], bandwidth: T) -> Result<KdeEstimate<T>> {
    if !(bandwidth > T::zero()) {
        return Err(PipfError::Usage("KDE bandwidth must be positive".into()));
    }
    check_dim("KDE state dimension", 1, ensemble.dim())?;
    let norm = T::one() / (bandwidth * T::two_pi().sqrt());
    let inv = T::one() / (bandwidth * bandwidth);
    let half = lit::<T>(0.5);
    let xs = ensemble.particles().row(0);
    let values = grid
        .iter()
        .map(|&g| {
            let mut acc = T::zero();
            for (x, w) in xs.iter().zip(ensemble.weights()) {
                let z = g - *x;
                acc += *w * (-(half * z * z * inv)).exp();
            }
            acc * norm
        })
        .collect();
    Ok(KdeEstimate {
        density: GridDensity::new(grid.to_vec(), values)?,
        bandwidth,
    })
}

/// `∫ |a − b|` by the trapezoid rule on the shared grid.
pub fn l1_density_distance<T: Real>(a: &GridDensity<T>, b: &GridDensity<T>) -> Result<T> {
    if a.grid != b.grid {
        return Err(PipfError::Usage("densities live on different grids".into()));
    }
    let diff: Vec<T> = a.values.iter().zip(&b.values).map(|(x, y)| (*x - *y).abs()).collect();
    Ok(trapezoid(&a.grid, &diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ens(xs: &[f64], ws: &[f64]) -> WeightedEnsemble<f64> {
        WeightedEnsemble::new(DMatrix::from_row_slice(1, xs.len(), xs), ws.to_vec()).unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn normal(x: f64, m: f64, s: f64) -> f64 {
        (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn moments_examples() {
        let m = ensemble_moments(&ens(&[3.0], &[1.0]));
        assert_eq!((m.mean[0], m.cov[(0, 0)]), (3.0, 0.0));
        let m = ensemble_moments(&ens(&[-1.0, 1.0], &[1.0, 1.0]));
        assert_eq!((m.mean[0], m.cov[(0, 0)]), (0.0, 1.0));
        let m = ensemble_moments(&ens(&[5.0, 99.0], &[1.0, 0.0]));
        assert_eq!((m.mean[0], m.cov[(0, 0)]), (5.0, 0.0));
    }

    #[test]
    fn mse_examples() {
        let at = |m: f64, c: DMatrix<f64>| Moments { mean: DVector::from_element(c.nrows(), m), cov: c };
        let oracle: Vec<_> = (0..5).map(|j| at(j as f64, DMatrix::identity(1, 1))).collect();
        let same = mse_series(&oracle, &oracle, &[1.0; 5], &[false; 5]).unwrap();
        assert!(same.mse_mean.iter().chain(&same.mse_cov).all(|&v| v == 0.0));
        let shifted: Vec<_> = (0..5).map(|j| at(j as f64 + 0.1, DMatrix::identity(1, 1))).collect();
        let s = mse_series(&shifted, &oracle, &[1.0; 5], &[false; 5]).unwrap();
        assert!(s.mse_mean.iter().all(|&v| (v - 0.01).abs() < 1e-12));
        let o2 = vec![at(0.0, DMatrix::identity(2, 2)); 3];
        let e2 = vec![at(0.0, DMatrix::identity(2, 2) * 2.0); 3];
        let s = mse_series(&e2, &o2, &[1.0; 3], &[false; 3]).unwrap();
        assert!(s.mse_cov.iter().all(|&v| v == 2.0));
        assert!(matches!(mse_series(&e2, &o2[..2], &[1.0; 3], &[false; 3]), Err(PipfError::Usage(_))));
    }

    #[test]
    fn single_particle_kde_is_gaussian() {
        let grid = linspace(-1.0, 1.0, 21);
        let k = kde(&ens(&[0.0], &[1.0]), &grid, 0.2).unwrap();
        for (x, d) in grid.iter().zip(k.density.values()) {
            assert!((d - normal(*x, 0.0, 0.2)).abs() < 1e-14);
        }
    }

    #[test]
    fn kde_integrates_to_one() {
        let xs: Vec<f64> = (0..50).map(|i| -5.0 + 10.0 * (i as f64 * 0.618).fract()).collect();
        let ws: Vec<f64> = (0..50).map(|i| 1.0 + (i % 7) as f64).collect();
        let k = kde(&ens(&xs, &ws), &linspace(-10.0, 10.0, 4001), 0.2).unwrap();
        assert!((k.density.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kde_shift_equivariance_and_weight_linearity() {
        let grid = linspace(-3.0, 3.0, 61);
        let a = kde(&ens(&[0.1, -0.4], &[0.3, 0.7]), &grid, 0.3).unwrap();
        let shifted_grid: Vec<f64> = grid.iter().map(|g| g + 1.5).collect();
        let b = kde(&ens(&[1.6, 1.1], &[0.3, 0.7]), &shifted_grid, 0.3).unwrap();
        for (x, y) in a.density.values().iter().zip(b.density.values()) {
            assert!((x - y).abs() < 1e-14);
        }
        let p = kde(&ens(&[0.1], &[1.0]), &grid, 0.3).unwrap();
        let q = kde(&ens(&[-0.4], &[1.0]), &grid, 0.3).unwrap();
        for i in 0..grid.len() {
            let mix = 0.3 * p.density.values()[i] + 0.7 * q.density.values()[i];
            assert!((a.density.values()[i] - mix).abs() < 1e-14);
        }
    }

    #[test]
    fn l1_examples() {
        let grid = linspace(-10.0, 10.0, 20001);
        let dens = |m: f64| GridDensity::new(grid.clone(), grid.iter().map(|&x| normal(x, m, 1.0)).collect()).unwrap();
        let a = dens(0.0);
        assert_eq!(l1_density_distance(&a, &a).unwrap(), 0.0);
        assert!((l1_density_distance(&a, &dens(0.1)).unwrap() - 0.0797).abs() < 1e-4);
        let box_at = |lo: f64| GridDensity::new(grid.clone(), grid.iter().map(|&x| if x >= lo && x <= lo + 1.0 { 1.0 } else { 0.0 }).collect()).unwrap();
        assert!((l1_density_distance(&box_at(-3.0), &box_at(3.0)).unwrap() - 2.0).abs() < 3e-3);
        let other = GridDensity::new(linspace(-1.0, 1.0, 5), vec![0.0; 5]).unwrap();
        assert!(l1_density_distance(&a, &other).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn covariance_is_symmetric_psd(data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.01f64..1.0), 1..40)) {
            let k = data.len();
            let mut particles = DMatrix::zeros(2, k);
            let mut w = Vec::with_capacity(k);
            for (i, (a, b, wi)) in data.iter().enumerate() {
                particles[(0, i)] = *a;
                particles[(1, i)] = *b;
                w.push(*wi);
            }
            let m = ensemble_moments(&WeightedEnsemble::new(particles, w).unwrap());
            prop_assert_eq!(m.cov[(0, 1)], m.cov[(1, 0)]);
            prop_assert!(m.cov.symmetric_eigen().eigenvalues.iter().all(|&l| l > -1e-12));
        }

        #[test]
        fn l1_is_a_metric(seeds in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let grid = linspace(-8.0, 8.0, 801);
            let d: Vec<GridDensity<f64>> = seeds
                .iter()
                .map(|&m| GridDensity::new(grid.clone(), grid.iter().map(|&x| normal(x, m, 0.5 + m.abs() * 0.2)).collect()).unwrap())
                .collect();
            let ab = l1_density_distance(&d[0], &d[1]).unwrap();
            let ba = l1_density_distance(&d[1], &d[0]).unwrap();
            let bc = l1_density_distance(&d[1], &d[2]).unwrap();
            let ac = l1_density_distance(&d[0], &d[2]).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((0.0..=2.0 + 1e-9).contains(&ab));
        }
    }
}
