//! Acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;

use pipf_core::baselines::{kalman_bucy_run, sir_run, SirConfig};
use pipf_core::control::{lqr_design_for, path_integral_control_estimate, Policy};
use pipf_core::observation::{generate_observations, LinearSensor};
use pipf_core::pipf::{pipf_run, PipfConfig, ProposalKind};
use pipf_core::sde::{simulate_path, LinearSde, NoisePath, TimeGrid, Window};
use pipf_core::{Lane, Stream};
use pipf_harness::scenarios::{simulate_truth, RunOutput};
use pipf_harness::{run_benes, run_h_sweep, run_linear_nd, run_ou, validate, ExperimentConfig, Scenario};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn config(scenario: Scenario, overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::with_overrides(scenario, &o).expect("valid acceptance config")
}

/// Trial-averaged value of `field` per estimator over rows with `keep(step)`.
fn average(out: &RunOutput, field: fn(&pipf_harness::scenarios::ResultRow) -> f64, keep: impl Fn(usize) -> bool) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in out.rows.iter().filter(|r| keep(r.step)) {
        let e = acc.entry(r.estimator.clone()).or_default();
        e.0 += field(r);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn ou_pair(steps: usize) -> (LinearSde<f64>, LinearSensor<f64>, TimeGrid<f64>) {
    (
        LinearSde::ornstein_uhlenbeck(1.0, 0.0, 1.0).unwrap(),
        LinearSensor::identity(1.0).unwrap(),
        TimeGrid::new(0.0, 0.01, steps).unwrap(),
    )
}

fn rel(holds: bool, op: char) -> String {
    if holds { op.to_string() } else { format!("NOT {op}") }
}

fn sir_equivalence() -> Verdict {
    let start = Instant::now();
    let (model, sensor, grid) = ou_pair(50);
    let stream = Stream::new(2024, 0);
    let (_, record) = simulate_truth(&model, &sensor, &grid, stream).unwrap();
    let sir = SirConfig { resampling: false, ..Default::default() };
    let pipf = PipfConfig { horizon: 1, resampling: false, proposal: ProposalKind::Zero, ..Default::default() };
    let a = sir_run(&model, &sensor, &record, &grid, &sir, stream).unwrap();
    let b = pipf_run(&model, &sensor, &record, &grid, pipf, stream).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.log_weights.iter().zip(&y.log_weights) {
            worst = worst.max((u - v).abs());
        }
    }
    verdict(
        worst < 1e-10 && secs < 1.0 && a.len() == b.len(),
        format!("max |Δ log w| = {worst:.2e} over 50 steps x 500 particles, {secs:.3}s"),
    )
}

fn oracle_consistency(ou: &RunOutput, cfg: &ExperimentConfig) -> Verdict {
    let (model, sensor, grid) = ou_pair(cfg.steps);
    let trials = cfg.trials;
    let mut diffs = vec![vec![0.0; trials]; cfg.steps + 1];
    let mut kb_var = 0.0;
    for t in 0..trials {
        let stream = Stream::new(cfg.seed, t as u64);
        let (_, record) = simulate_truth(&model, &sensor, &grid, stream).unwrap();
        let kb = kalman_bucy_run(&model, &sensor, &record, &grid).unwrap();
        if t == 0 {
            kb_var = kb[cfg.steps].cov[(0, 0)];
        }
        for r in ou.rows_for("pipf-lqr").filter(|r| r.trial == t) {
            diffs[r.step][t] = r.mean[0] - kb[r.step].mean[0];
        }
    }
    let mut worst_z: f64 = 0.0;
    let mut outside = 0;
    for d in &diffs {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = mean.abs() / (sd / n.sqrt());
        worst_z = worst_z.max(z);
        if z > 3.0 {
            outside += 1;
        }
    }
    let target = 2f64.sqrt() - 1.0;
    let rel = (kb_var - target).abs() / target;
    verdict(
        outside == 0 && rel < 0.02,
        format!(
            "{outside} of {} steps beyond 3 SE (max {worst_z:.2} SE); stationary KB variance {kb_var:.6} vs {target:.6} ({:.3}% off)",
            cfg.steps + 1,
            rel * 100.0
        ),
    )
}

fn orderings(with: &RunOutput, without: &RunOutput, steps: usize) -> Verdict {
    let mse = average(with, |r| r.mse_mean, |j| 3 * j > 2 * steps);
    let gamma = average(without, |r| r.effective_ratio, |j| j == steps);
    let (ml, mz, ms) = (mse["pipf-lqr"], mse["pipf-zero"], mse["sir"]);
    let (gl, gz, gs) = (gamma["pipf-lqr"], gamma["pipf-zero"], gamma["sir"]);
    verdict(
        ml < mz && mz < ms && gl > gz && gz > gs,
        format!(
            "final-third MSE lqr {ml:.3e} {} zero {mz:.3e} {} sir {ms:.3e}; final γ without resampling lqr {gl:.4} {} zero {gz:.4} {} sir {gs:.4}",
            rel(ml < mz, '<'),
            rel(mz < ms, '<'),
            rel(gl > gz, '>'),
            rel(gz > gs, '>'),
        ),
    )
}

fn h_trend(sweep: &RunOutput, h_list: &[usize]) -> Verdict {
    let mse = average(sweep, |r| r.mse_mean, |_| true);
    let report: Vec<String> = h_list
        .iter()
        .map(|h| format!("H={h}: {:.3e}", mse[&format!("pipf-lqr-h{h}")]))
        .collect();
    let (m1, m20) = (mse["pipf-lqr-h1"], mse["pipf-lqr-h20"]);
    verdict(m20 <= m1, format!("mean MSE {}; sir {:.3e}", report.join(", "), mse["sir"]))
}

fn dimension_scaling(nd: &RunOutput, cfg: &ExperimentConfig) -> Verdict {
    let gamma = average(nd, |r| r.effective_ratio, |j| j == cfg.steps);
    let mut ok = true;
    let report: Vec<String> = cfg
        .linear_nd
        .dims
        .iter()
        .map(|n| {
            let (p, s) = (gamma[&format!("pipf-lqr-n{n}")], gamma[&format!("sir-n{n}")]);
            ok &= p - s >= 0.0;
            format!("n={n}: {p:.4} vs {s:.4}")
        })
        .collect();
    verdict(ok, format!("final γ pipf-lqr vs sir, {}", report.join("; ")))
}

fn benes_validation(out: &RunOutput, cfg: &ExperimentConfig) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for &t in &cfg.benes.snapshot_times {
        let at = |est: &str| -> Vec<f64> {
            out.distances
                .iter()
                .filter(|d| d.estimator == est && (d.time - t).abs() < 1e-9)
                .map(|d| d.l1)
                .collect()
        };
        let oracle = at("sir-oracle")[0];
        let ilqr = at("pipf-ilqr");
        let ilqr_mean = ilqr.iter().sum::<f64>() / ilqr.len() as f64;
        let ilqr_max = ilqr.iter().copied().fold(0.0, f64::max);
        ok &= oracle < 0.1 && ilqr_mean < 0.3;
        parts.push(format!("t={t}: oracle {oracle:.3}, pipf-ilqr mean {ilqr_mean:.3} (max {ilqr_max:.3})"));
    }
    let mse = average(out, |r| r.mse_mean, |_| true);
    let (mi, mz, ms) = (mse["pipf-ilqr"], mse["pipf-zero"], mse["sir"]);
    ok &= mi < ms;
    parts.push(format!("mean MSE ilqr {mi:.3e}, zero {mz:.3e}, sir {ms:.3e}"));
    verdict(ok, format!("L={}, dt={}: {}", cfg.steps, cfg.dt, parts.join("; ")))
}

fn property_suites() -> Verdict {
    let checks = validate::run_all();
    let total: f64 = checks.iter().map(|c| c.seconds).sum();
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    for c in &checks {
        println!("    {} {} ({:.2}s): {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.seconds, c.detail);
    }
    verdict(
        failed.is_empty() && total < 30.0,
        if failed.is_empty() { format!("{} suites in {total:.2}s", checks.len()) } else { failed.join("; ") },
    )
}

fn zero_variance() -> Verdict {
    let dt = 0.001;
    let steps = 200;
    let model = LinearSde::ornstein_uhlenbeck(1.0, 0.0, 1.0).unwrap();
    let sensor = LinearSensor::identity(1.0).unwrap();
    let grid = TimeGrid::new(0.0, dt, steps).unwrap();
    let stream = Stream::new(99, 0);
    let x0 = DVector::from_element(1, 0.5);
    let noise = NoisePath::generate(stream.key(Lane::Truth, 0), 0, steps, 1, dt);
    let truth = simulate_path(&model, &grid, &Policy::zero(1), &x0, &noise).unwrap();
    let record = generate_observations(&sensor, &grid, &truth, stream).unwrap();
    let window = Window::new(0, steps).unwrap();
    let (lqr, _) = lqr_design_for(&model, &sensor, &record, &grid, window).unwrap();
    let samples = 2000;
    let est = |policy: &Policy<f64>| {
        path_integral_control_estimate(&model, &sensor, &record, &grid, policy, 0, &x0, samples, steps, stream)
            .unwrap()
            .log_weight_variance()
    };
    let (v_zero, v_lqr) = (est(&Policy::zero(1)), est(&lqr));
    let ratio = v_lqr / v_zero;
    verdict(
        ratio <= 0.1,
        format!("log-weight variance lqr {v_lqr:.3e} / zero {v_zero:.3e} = {ratio:.4} (window {steps} steps, dt {dt}, {samples} paired paths)"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut record = |id, name, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{id}] {name} ({secs:.1}s): {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v, secs));
    };

    record(1, "SIR equivalence", &mut sir_equivalence);
    record(7, "property suites", &mut property_suites);
    record(8, "zero-variance tendency", &mut zero_variance);

    let ou_cfg = config(Scenario::Ou, &[]);
    let mut ou_with = None;
    record(2, "oracle consistency", &mut || {
        let out = run_ou(&ou_cfg).unwrap();
        let v = oracle_consistency(&out, &ou_cfg);
        ou_with = Some(out);
        v
    });
    record(3, "paper orderings", &mut || {
        let without = run_ou(&config(Scenario::Ou, &["resampling=false"])).unwrap();
        orderings(ou_with.as_ref().unwrap(), &without, ou_cfg.steps)
    });
    record(4, "H-sweep trend", &mut || {
        let h_list = [1, 5, 20, 50];
        let cfg = config(Scenario::Ou, &["h_list=[1, 5, 20, 50]", "controller=lqr"]);
        h_trend(&run_h_sweep(&cfg).unwrap(), &h_list)
    });
    record(5, "dimension scaling", &mut || {
        let cfg = config(Scenario::LinearNd, &["linear_nd.dims=[1, 2, 4, 8]", "resampling=false", "trials=20"]);
        dimension_scaling(&run_linear_nd(&cfg).unwrap(), &cfg)
    });
    record(6, "Benes validation", &mut || {
        let cfg = config(Scenario::Benes, &["benes.oracle_particles=100000"]);
        benes_validation(&run_benes(&cfg).unwrap(), &cfg)
    });

    results.sort_by_key(|r| r.0);
    println!("\nsummary:");
    for (id, name, v, secs) in &results {
        println!("{} [{id}] {name} ({secs:.1}s)", if v.passed { "PASS" } else { "FAIL" });
    }
    if results.iter().all(|r| r.2.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
