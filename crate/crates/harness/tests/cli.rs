use std::process::Command;

use pipf_harness::output::{result_header, results_bytes};
use pipf_harness::scenarios::linear_nd_system;
use pipf_harness::{run_h_sweep, run_linear_nd, run_ou, Controller, ExperimentConfig, Scenario};
use proptest::prelude::*;

fn pipf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pipf"))
}

fn cfg(scenario: Scenario, overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::with_overrides(scenario, &o).unwrap()
}

#[test]
fn ou_row_count() {
    let out = run_ou(&cfg(Scenario::Ou, &["trials=1", "steps=10", "particles=50"])).unwrap();
    assert_eq!(out.rows.len(), 3 * 11);
    for tag in ["sir", "pipf-zero", "pipf-lqr"] {
        let steps: Vec<usize> = out.rows_for(tag).map(|r| r.step).collect();
        assert_eq!(steps, (0..=10).collect::<Vec<_>>());
    }
}

#[test]
fn cli_writes_exact_header_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        let status = pipf()
            .args(["run-ou", "--trials", "2", "--steps", "15", "--particles", "40", "--seed", "3", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let text = String::from_utf8(bytes.remove(0)).unwrap();
    assert_eq!(text.lines().next().unwrap(), "trial,step,time,estimator,mse_mean,mse_cov,effective_ratio,resampled,mean_0");
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 16);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.toml");
    std::fs::write(&file, "trials = 1\nsteps = 5\nparticles = 20\n[ou]\nkappa = 2.0\n").unwrap();
    let out = pipf()
        .args(["run-ou", "--print-config", "--horizon", "3", "--set", "ou.m0=0.5", "--config"])
        .arg(&file)
        .output()
        .unwrap();
    assert!(out.status.success());
    let printed = ExperimentConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap(), &[]).unwrap();
    assert_eq!((printed.trials, printed.steps, printed.horizon), (1, 5, 3));
    assert_eq!((printed.ou.kappa, printed.ou.m0), (2.0, 0.5));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let code = |args: &[&str]| pipf().args(args).arg("--out").arg(&out).status().unwrap().code();
    assert_eq!(code(&["run-ou", "--trials", "0"]), Some(2));
    assert_eq!(code(&["run-ou", "--set", "sigma_b=-1"]), Some(2));
    assert_eq!(code(&["run-benes", "--set", "scenario=\"ou\""]), Some(2));
    assert_eq!(
        code(&["run-ou", "--trials", "1", "--steps", "300", "--particles", "10", "--set", "ou.kappa=-1e5"]),
        Some(3)
    );
    assert_eq!(code(&["run-ou", "--trials", "1", "--steps", "4", "--particles", "10"]), Some(0));
}

#[test]
fn h_sweep_shares_truth_with_plain_run() {
    let base = ["trials=2", "steps=30", "particles=40", "horizon=6"];
    let ou = run_ou(&cfg(Scenario::Ou, &base)).unwrap();
    let mut o = base.to_vec();
    o.extend(["h_list=[1, 6]", "controller=lqr"]);
    let sweep = run_h_sweep(&cfg(Scenario::Ou, &o)).unwrap();
    let a: Vec<_> = ou.rows_for("pipf-lqr").collect();
    let b: Vec<_> = sweep.rows_for("pipf-lqr-h6").collect();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.mse_mean, &x.mean), (y.mse_mean, &y.mean));
    }
    let sir_a: Vec<_> = ou.rows_for("sir").map(|r| r.mse_mean).collect();
    let sir_b: Vec<_> = sweep.rows_for("sir").map(|r| r.mse_mean).collect();
    assert_eq!(sir_a, sir_b);
}

#[test]
fn linear_nd_systems_are_seeded_and_stable() {
    for n in [1, 3, 8] {
        let (a, c) = linear_nd_system(5, n);
        assert_eq!(linear_nd_system(5, n), (a.clone(), c.clone()));
        assert_ne!(linear_nd_system(6, n).0, a);
        assert_eq!(c.shape(), (n, n));
        let top = ((&a + a.transpose()) * 0.5).symmetric_eigenvalues().max();
        assert!(top <= -0.1 + 1e-12, "n={n}: {top}");
    }
}

#[test]
fn linear_nd_rows_pad_to_widest_dimension() {
    let out = run_linear_nd(&cfg(Scenario::LinearNd, &["trials=1", "steps=8", "particles=30", "horizon=4", "linear_nd.dims=[1, 3]"])).unwrap();
    assert_eq!(out.mean_width(), 3);
    assert_eq!(out.rows.len(), 4 * 9);
    let text = String::from_utf8(results_bytes(&out).unwrap()).unwrap();
    assert_eq!(text.lines().next().unwrap(), result_header(3).join(","));
    let first_n1 = text.lines().find(|l| l.contains(",sir-n1,")).unwrap();
    assert!(first_n1.ends_with(",,"));
}

#[test]
fn benes_writes_snapshot_and_distance_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("benes.csv");
    let status = pipf()
        .args(["run-benes", "--trials", "1", "--steps", "300", "--particles", "30", "--horizon", "4"])
        .args(["--set", "dt=0.01", "--set", "benes.snapshot_times=[1.0, 3.0]", "--set", "benes.grid_points=51", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let snaps = std::fs::read_to_string(dir.path().join("benes_snapshots.csv")).unwrap();
    assert_eq!(snaps.lines().next().unwrap(), "time,x,density,source");
    // analytic plus three estimators, two times, 51 points each
    assert_eq!(snaps.lines().count(), 1 + 4 * 2 * 51);
    let dists = std::fs::read_to_string(dir.path().join("benes_distances.csv")).unwrap();
    assert_eq!(dists.lines().count(), 1 + 3 * 2);
    for line in dists.lines().skip(1) {
        let l1: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=2.0).contains(&l1));
    }
}

fn scenario() -> impl Strategy<Value = Scenario> {
    prop_oneof![Just(Scenario::Ou), Just(Scenario::LinearNd), Just(Scenario::Benes)]
}

fn controller() -> impl Strategy<Value = Controller> {
    prop_oneof![Just(Controller::Zero), Just(Controller::Lqr), Just(Controller::Ilqr)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        sc in scenario(),
        ctl in controller(),
        seed in 0..=i64::MAX as u64,
        trials in 1usize..100,
        dt in 1e-4f64..0.1,
        gamma in 0.0f64..1.0,
        sigma_b in 0.01f64..10.0,
        kappa in -5.0f64..5.0,
        h_list in proptest::collection::vec(1usize..100, 1..5),
        resampling in any::<bool>(),
    ) {
        let mut c = ExperimentConfig::defaults(sc);
        c.controller = ctl;
        c.seed = seed;
        c.trials = trials;
        c.gamma_thres = gamma;
        c.resampling = resampling;
        c.h_list = h_list;
        c.ou.kappa = kappa;
        if sc == Scenario::Benes {
            c.benes.snapshot_times = vec![c.steps as f64 * dt];
        } else {
            c.sigma_b = sigma_b;
        }
        c.dt = dt;
        prop_assert!(c.validate().is_ok());
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string(), &[]).unwrap();
        prop_assert_eq!(back, c);
    }
}
