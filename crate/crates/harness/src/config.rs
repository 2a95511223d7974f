//! Experiment configuration: TOML file, per-scenario defaults, overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ou,
    LinearNd,
    Benes,
}

/// PIPF proposal used by the sweep scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Zero,
    Lqr,
    Ilqr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    pub kappa: f64,
    pub m0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearNdSection {
    pub dims: Vec<usize>,
    /// Every component of the prior mean.
    pub m0: f64,
    /// Prior covariance is `p0·I`.
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenesSection {
    pub mu: f64,
    pub sigma_w: f64,
    pub h1: f64,
    pub h2: f64,
    pub x0: f64,
    /// Variance of the Gaussian that stands in for the point-mass start.
    pub prior_var: f64,
    pub snapshot_times: Vec<f64>,
    pub bandwidth: f64,
    /// Density grid spans the analytic mean ± this.
    pub grid_half_width: f64,
    pub grid_points: usize,
    /// Particles of the brute-force SIR reference at the snapshots (0 = off).
    pub oracle_particles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlqrSection {
    pub iters: usize,
    pub backtrack: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: usize,
    pub output: PathBuf,
    /// Number of time steps `L`.
    pub steps: usize,
    pub dt: f64,
    /// Particles `K`.
    pub particles: usize,
    /// Window length `H`.
    pub horizon: usize,
    pub controller: Controller,
    pub gamma_thres: f64,
    pub resampling: bool,
    pub sigma_b: f64,
    /// Window lengths of the H-sweep.
    pub h_list: Vec<usize>,
    pub ou: OuSection,
    pub linear_nd: LinearNdSection,
    pub benes: BenesSection,
    pub ilqr: IlqrSection,
}

impl ExperimentConfig {
    pub fn defaults(scenario: Scenario) -> Self {
        let mut cfg = Self {
            scenario,
            seed: 0,
            trials: 50,
            output: PathBuf::from("results.csv"),
            steps: 600,
            dt: 0.01,
            particles: 500,
            horizon: 20,
            controller: Controller::Lqr,
            gamma_thres: 0.5,
            resampling: true,
            sigma_b: 1.0,
            h_list: vec![1, 5, 10, 20, 40],
            ou: OuSection { kappa: 1.0, m0: 0.0, p0: 1.0 },
            linear_nd: LinearNdSection { dims: vec![1, 2, 4, 8], m0: 0.0, p0: 1.0 },
            benes: BenesSection {
                mu: 1.0,
                sigma_w: 1.0,
                h1: 1.0,
                h2: 0.0,
                x0: -5.0,
                prior_var: 1e-10,
                snapshot_times: vec![2.0, 4.0, 6.0],
                bandwidth: 0.2,
                grid_half_width: 6.0,
                grid_points: 601,
                oracle_particles: 0,
            },
            ilqr: IlqrSection { iters: 10, backtrack: 0.5, max_halvings: 8 },
        };
        match scenario {
            Scenario::Ou => {}
            Scenario::LinearNd => cfg.resampling = false,
            Scenario::Benes => {
                cfg.steps = 6000;
                cfg.dt = 0.001;
                cfg.horizon = 10;
                cfg.controller = Controller::Ilqr;
                cfg.trials = 20;
            }
        }
        cfg
    }

    /// Parses TOML text; missing keys take the defaults of the named scenario
    /// (`ou` when absent) and `overrides` (`key.path=value`) apply last.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        Self::from_table(parse_table(text)?, overrides)
    }

    /// Like [`ExperimentConfig::from_toml_str`] for a run that needs
    /// `scenario`: an absent scenario key means `scenario`, a different one is
    /// an error.
    pub fn for_scenario(scenario: Scenario, text: Option<&str>, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table = parse_table(text.unwrap_or(""))?;
        if !table.contains_key("scenario") {
            let v = toml::Value::try_from(scenario).expect("scenario serializes");
            table.insert("scenario".into(), v);
        }
        let cfg = Self::from_table(table, overrides)?;
        if cfg.scenario != scenario {
            return Err(HarnessError::Config(format!(
                "this command runs scenario {scenario:?}, the configuration names {:?}",
                cfg.scenario
            )));
        }
        Ok(cfg)
    }

    fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Self, HarnessError> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let scenario = match table.get("scenario") {
            None => Scenario::Ou,
            Some(v) => v.clone().try_into().map_err(|e| HarnessError::Config(format!("scenario: {e}")))?,
        };
        let mut merged = toml::Table::try_from(Self::defaults(scenario)).expect("defaults serialize");
        merge(&mut merged, table);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| HarnessError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        Self::from_toml_str(&read_config(path)?, overrides)
    }

    /// Defaults for `scenario` with `overrides` applied.
    pub fn with_overrides(scenario: Scenario, overrides: &[String]) -> Result<Self, HarnessError> {
        Self::for_scenario(scenario, None, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in a TOML integer (at most 2^63 - 1)");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.steps == 0 || self.particles == 0 || self.horizon == 0 {
            return bad("steps, particles and horizon must be at least 1");
        }
        if !positive(self.dt) || !positive(self.sigma_b) {
            return bad("dt and sigma_b must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma_thres) {
            return bad("gamma_thres must lie in [0, 1]");
        }
        if self.h_list.is_empty() || self.h_list.contains(&0) {
            return bad("h_list entries must be at least 1");
        }
        if !self.ou.kappa.is_finite() || !self.ou.m0.is_finite() || !positive(self.ou.p0) {
            return bad("ou: kappa and m0 must be finite, p0 positive");
        }
        let nd = &self.linear_nd;
        if nd.dims.is_empty() || nd.dims.contains(&0) || !nd.m0.is_finite() || !positive(nd.p0) {
            return bad("linear_nd: dims must be nonempty and positive, p0 positive");
        }
        let b = &self.benes;
        if !positive(b.sigma_w) || b.h1 == 0.0 || !b.h1.is_finite() || !b.mu.is_finite() || !b.h2.is_finite() {
            return bad("benes: sigma_w must be positive and h1 nonzero");
        }
        if !b.x0.is_finite() || !positive(b.prior_var) || !positive(b.bandwidth) || !positive(b.grid_half_width) {
            return bad("benes: x0 finite; prior_var, bandwidth, grid_half_width positive");
        }
        if b.grid_points < 2 {
            return bad("benes: grid_points must be at least 2");
        }
        if self.scenario == Scenario::Benes {
            if self.sigma_b != 1.0 {
                return bad("benes: the sensor noise is fixed at sigma_b = 1");
            }
            for &t in &b.snapshot_times {
                if self.snapshot_index(t).is_none() {
                    return bad("benes: snapshot times must be grid points in (0, L·dt]");
                }
            }
        }
        let il = &self.ilqr;
        if il.iters == 0 || !(il.backtrack > 0.0 && il.backtrack < 1.0) {
            return bad("ilqr: iters must be at least 1 and backtrack in (0, 1)");
        }
        Ok(())
    }

    /// Grid index of a snapshot time, if it is a grid point in `(0, L·dt]`.
    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        let j = (t / self.dt).round();
        let close = (j * self.dt - t).abs() <= 1e-9 * t.abs().max(1.0);
        (close && j >= 1.0 && j <= self.steps as f64).then_some(j as usize)
    }
}

pub fn read_config(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn parse_table(text: &str) -> Result<toml::Table, HarnessError> {
    text.parse().map_err(|e| HarnessError::Config(format!("{e}")))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `key.path=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
