//! Fast invariant suites, shared by `pipf validate` and the acceptance run.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use pipf_core::control::{ilqr_design, lqr_design, lqr_design_for, IlqrConfig, Policy};
use pipf_core::observation::{
    generate_observations, measurement_cost, window_cost, CostForm, LinearSensor, ObservationRecord,
};
use pipf_core::pipf::{effective_ratio, multinomial_ancestors, normalize_log_weights};
use pipf_core::sde::{simulate_path, GaussianPrior, LinearSde, NoisePath, StatePath, TimeGrid, Window};
use pipf_core::{Lane, Stream};

use crate::config::{ExperimentConfig, Scenario};
use crate::output::results_bytes;
use crate::scenarios::run_ou;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in [1usize, 2, 7, 500] {
        for seed in 0..40 {
            let key = Stream::new(seed, 0).key(Lane::Aux(k as u64), 0);
            let lw: Vec<f64> = key.normals::<f64>(0, k, 40.0).iter().map(|v| v - 700.0).collect();
            let w = normalize_log_weights(&lw).map_err(|e| e.to_string())?;
            let sum: f64 = w.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            ensure(w.iter().all(|&x| (0.0..=1.0).contains(&x)), || format!("weight outside [0, 1] for K={k}"))?;
            let g = effective_ratio(&w).map_err(|e| e.to_string())?;
            let lo = 1.0 / k as f64;
            ensure(g >= lo - 1e-12 && g <= 1.0 + 1e-12, || format!("γ = {g} outside [{lo}, 1]"))?;
        }
    }
    ensure(worst < 1e-12, || format!("weights sum off by {worst:e}"))?;
    Ok(format!("max |Σw − 1| = {worst:.1e}"))
}

fn multinomial_unbiased() -> Outcome {
    let (k, reps) = (10usize, 10_000usize);
    let raw: Vec<f64> = (0..k).map(|i| 1.0 + i as f64).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let mut counts = vec![0usize; k];
    for rep in 0..reps {
        let key = Stream::new(rep as u64, 0).key(Lane::Resample(0), 0);
        for a in multinomial_ancestors(&w, k, key).map_err(|e| e.to_string())? {
            counts[a] += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let mean = c as f64 / reps as f64;
        let expect = k as f64 * w[i];
        let se = (k as f64 * w[i] * (1.0 - w[i]) / reps as f64).sqrt();
        worst = worst.max((mean - expect).abs() / se);
    }
    ensure(worst <= 3.0, || format!("copy count off by {worst:.2} standard errors"))?;
    Ok(format!("max deviation {worst:.2} SE over {reps} draws"))
}

type CostSetup = (StatePath<f64>, ObservationRecord<f64>, TimeGrid<f64>, LinearSensor<f64>);

/// An OU record and a different path simulated under an affine control.
fn cost_setup(seed: u64, steps: usize, sigma_b: f64) -> Result<CostSetup, String> {
    let err = |e: pipf_core::PipfError| e.to_string();
    let model = LinearSde::ornstein_uhlenbeck(1.0, 0.0, 1.0).map_err(err)?;
    let grid = TimeGrid::new(0.0, 0.01, steps).map_err(err)?;
    let stream = Stream::new(seed, 0);
    let one = |v: f64| DVector::from_element(1, v);
    let truth_noise = NoisePath::generate(stream.key(Lane::Truth, 0), 0, steps, 1, 0.01);
    let truth = simulate_path(&model, &grid, &Policy::zero(1), &one(0.3), &truth_noise).map_err(err)?;
    let obs = LinearSensor::identity(sigma_b).map_err(err)?;
    let record = generate_observations(&obs, &grid, &truth, stream).map_err(err)?;
    let policy = Policy::constant_affine(0, steps, DMatrix::from_element(1, 1, -0.7), one(0.4));
    let noise = NoisePath::generate(stream.key(Lane::Aux(1), 0), 0, steps, 1, 0.01);
    let path = simulate_path(&model, &grid, &policy, &one(-0.2), &noise).map_err(err)?;
    Ok((path, record, grid, obs))
}

fn summation_by_parts() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (path, record, grid, obs) = cost_setup(seed, 80, 0.4 + 0.1 * seed as f64)?;
        for (s, e) in [(0, 80), (7, 31), (79, 80)] {
            let w = Window::new(s, e).map_err(|e| e.to_string())?;
            let a = measurement_cost(&path, &obs, &record, &grid, w, CostForm::YDh).map_err(|e| e.to_string())?;
            let b = measurement_cost(&path, &obs, &record, &grid, w, CostForm::HdY).map_err(|e| e.to_string())?;
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
    }
    ensure(worst < 1e-12, || format!("Y·dh and h·dY sums differ by {worst:e}"))?;
    Ok(format!("max relative gap {worst:.1e}"))
}

fn additivity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (path, record, grid, obs) = cost_setup(100 + seed, 40, 0.7)?;
        let cost = |a, c| {
            window_cost(&path, &obs, &record, &grid, Window::new(a, c).unwrap(), CostForm::YDh)
                .map(|p| p.total())
                .map_err(|e| e.to_string())
        };
        let whole = cost(3, 40)?;
        for b in 4..40 {
            worst = worst.max((whole - cost(3, b)? - cost(b, 40)?).abs());
        }
    }
    ensure(worst < 1e-11, || format!("S(a,c) − S(a,b) − S(b,c) = {worst:e}"))?;
    Ok(format!("max gap {worst:.1e}"))
}

fn riccati_psd() -> Outcome {
    let grid = TimeGrid::new(0.0, 0.01, 100).map_err(|e| e.to_string())?;
    let inc = (0..100)
        .map(|j| DVector::from_vec(vec![(j as f64 * 0.1).sin() * 0.01, 0.002]))
        .collect();
    let record = ObservationRecord::from_increments(2, inc).map_err(|e| e.to_string())?;
    let mut lowest = f64::INFINITY;
    for seed in 0..20 {
        let e = Stream::new(seed, 0).key(Lane::Aux(0), 0).normals::<f64>(0, 12, 0.6);
        let a = DMatrix::from_row_slice(2, 2, &e.as_slice()[0..4]) - DMatrix::identity(2, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &e.as_slice()[4..8]);
        let c = DMatrix::from_row_slice(2, 2, &e.as_slice()[8..12]);
        let w = Window::new(0, 100).map_err(|e| e.to_string())?;
        let (_, value) = lqr_design(&a, &sigma, &c, 0.8, &record, &grid, w).map_err(|e| e.to_string())?;
        for j in 0..=100 {
            let p = value.p(j);
            ensure(p[(0, 1)] == p[(1, 0)], || format!("P not symmetric at step {j}"))?;
            lowest = lowest.min(p.symmetric_eigenvalues().min());
        }
    }
    ensure(lowest > -1e-12, || format!("P eigenvalue {lowest:e}"))?;
    Ok(format!("smallest eigenvalue {lowest:.1e}"))
}

/// Largest finite-difference HJB residual of the scalar LQ value function.
fn hjb_residual(dt: f64) -> Result<f64, String> {
    let (a, sig, cc, sb) = (-1.0, 1.0, 1.0, 1.0);
    let steps = (2.0 / dt).round() as usize;
    let grid = TimeGrid::new(0.0, dt, steps).map_err(|e| e.to_string())?;
    let inc = (0..steps).map(|j| DVector::from_element(1, grid.time(j).cos() * dt)).collect();
    let record = ObservationRecord::from_increments(1, inc).map_err(|e| e.to_string())?;
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let w = Window::new(0, steps).map_err(|e| e.to_string())?;
    let (_, value) = lqr_design(&m(a), &m(sig), &m(cc), sb, &record, &grid, w).map_err(|e| e.to_string())?;
    let q = cc * cc / (sb * sb);
    let lin = |j: usize| -cc * record.dy(j)[0] / (sb * sb * dt);
    // the constant part of V never reaches the policy; integrate it here
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
    Ok(worst)
}

fn hjb_first_order() -> Outcome {
    let coarse = hjb_residual(0.01)?;
    let fine = hjb_residual(0.005)?;
    ensure(coarse < 5.0 * 0.01 && fine < 0.6 * coarse, || {
        format!("residual {coarse:.2e} at dt=0.01, {fine:.2e} at dt=0.005")
    })?;
    Ok(format!("residual {coarse:.2e} → {fine:.2e} when dt halves"))
}

fn ilqr_matches_lqr() -> Outcome {
    let err = |e: pipf_core::PipfError| e.to_string();
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.2, -0.3]);
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.8]);
    let prior = GaussianPrior::isotropic(DVector::zeros(2), 1.0).map_err(err)?;
    let model = LinearSde::new(a, sigma, prior).map_err(err)?;
    let obs = LinearSensor::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), 0.7).map_err(err)?;
    let grid = TimeGrid::new(0.0, 0.01, 60).map_err(err)?;
    let stream = Stream::new(2, 0);
    let noise = NoisePath::generate(stream.key(Lane::Truth, 0), 0, 60, 2, 0.01);
    let x0 = DVector::from_vec(vec![1.0, -1.0]);
    let truth = simulate_path(&model, &grid, &Policy::zero(2), &x0, &noise).map_err(err)?;
    let record = generate_observations(&obs, &grid, &truth, stream).map_err(err)?;
    let w = Window::new(20, 60).map_err(err)?;
    let (lqr, _) = lqr_design_for(&model, &obs, &record, &grid, w).map_err(err)?;
    let x_init = DVector::from_vec(vec![0.4, 0.1]);
    let out = ilqr_design(&model, &obs, &record, &grid, w, &x_init, &IlqrConfig::default()).map_err(err)?;
    let (p, q) = (lqr.as_affine().unwrap(), out.policy.as_affine().unwrap());
    let worst = (20..60)
        .map(|j| f64::max((p.gain(j) - q.gain(j)).amax(), (p.offset(j) - q.offset(j)).amax()))
        .fold(0.0, f64::max);
    ensure(worst < 1e-10, || format!("gains differ by {worst:e}"))?;
    Ok(format!("max gain/offset gap {worst:.1e}"))
}

fn determinism() -> Outcome {
    let overrides: Vec<String> = ["trials=3", "steps=40", "particles=64", "horizon=5", "seed=11"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cfg = ExperimentConfig::with_overrides(Scenario::Ou, &overrides).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let out = pool.install(|| run_ou(&cfg)).map_err(|e| e.to_string())?;
        outputs.push(results_bytes(&out).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "CSV bytes differ between 1 and 3 worker threads".into())?;
    Ok(format!("{} identical bytes", outputs[0].len()))
}

/// Runs every suite; each result carries its wall time.
pub fn run_all() -> Vec<Check> {
    let suites: [(&'static str, fn() -> Outcome); 8] = [
        ("weight normalization and effective ratio range", normalization),
        ("multinomial resampling unbiased", multinomial_unbiased),
        ("summation by parts", summation_by_parts),
        ("path cost additivity", additivity),
        ("Riccati symmetric PSD", riccati_psd),
        ("HJB residual first order", hjb_first_order),
        ("iLQR equals LQR on linear problems", ilqr_matches_lqr),
        ("deterministic CSV under parallel schedules", determinism),
    ];
    suites
        .into_iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let result = f();
            let seconds = start.elapsed().as_secs_f64();
            match result {
                Ok(detail) => Check { name, passed: true, detail, seconds },
                Err(detail) => Check { name, passed: false, detail, seconds },
            }
        })
        .collect()
}
