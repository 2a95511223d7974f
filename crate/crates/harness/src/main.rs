use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pipf_harness::config::read_config;
use pipf_harness::{output, scenarios, validate, ExperimentConfig, HarnessError, Scenario};

#[derive(Parser)]
#[command(name = "pipf", version, about = "Path integral particle filter benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SIR, PIPF-zero and PIPF-LQR on the scalar OU model.
    RunOu(RunArgs),
    /// PIPF on the OU model for every window length in `h_list`.
    RunHSweep(RunArgs),
    /// SIR and PIPF on random stable linear systems of growing dimension.
    RunLinearNd(RunArgs),
    /// SIR, PIPF-zero and PIPF-iLQR on the Benes model with density snapshots.
    RunBenes(RunArgs),
    /// Runs the invariant suites.
    Validate,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Result CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Override any field, e.g. `--set ou.kappa=2` or `--set h_list=[1,20]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl RunArgs {
    fn resolve(&self, scenario: Scenario) -> Result<ExperimentConfig, HarnessError> {
        let text = self.config.as_deref().map(read_config).transpose()?;
        let mut overrides = self.set.clone();
        let numeric = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("particles", self.particles.map(|v| v.to_string())),
            ("horizon", self.horizon.map(|v| v.to_string())),
        ];
        overrides.extend(numeric.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
        if let Some(out) = &self.out {
            let quoted = toml::Value::String(out.to_string_lossy().into_owned()).to_string();
            overrides.push(format!("output={quoted}"));
        }
        ExperimentConfig::for_scenario(scenario, text.as_deref(), &overrides)
    }
}

fn run(args: &RunArgs, scenario: Scenario, f: fn(&ExperimentConfig) -> Result<scenarios::RunOutput, HarnessError>) -> Result<(), HarnessError> {
    let cfg = args.resolve(scenario)?;
    if args.print_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let out = f(&cfg)?;
    for path in output::write_run(&out, &cfg.output)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunOu(a) => run(a, Scenario::Ou, scenarios::run_ou),
        Command::RunHSweep(a) => run(a, Scenario::Ou, scenarios::run_h_sweep),
        Command::RunLinearNd(a) => run(a, Scenario::LinearNd, scenarios::run_linear_nd),
        Command::RunBenes(a) => run(a, Scenario::Benes, scenarios::run_benes),
        Command::Validate => {
            let checks = validate::run_all();
            for c in &checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {} ({:.2}s): {}", c.name, c.seconds, c.detail);
            }
            return if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
