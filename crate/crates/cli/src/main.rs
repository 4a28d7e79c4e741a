use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clc_sim::library;
use clc_sim::runner::{self, OUTPUT_DIR_ENV};
use clc_sim::scenario::{Checker, ScenarioConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "clc", version, about = "Checkpointed longest chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Override a config field by dotted path, e.g. `--set network.gst=800`.
    #[arg(long = "set", short = 'D', value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn list(&self) -> Vec<String> {
        let mut v = self.set.clone();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write trace, report and CSV tables.
    Run {
        /// Bundled scenario name or path to a TOML file.
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (default: $CLC_OUTPUT_DIR or ./clc-out).
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Re-run analytics on a stored trace.
    Replay {
        trace: PathBuf,
        /// Restrict to these checkers (repeatable); default is the trace's own config.
        #[arg(long = "checker")]
        checkers: Vec<Checker>,
        /// Write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Fail unless the new report is byte-identical to this one.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Run scenarios across consecutive seeds and aggregate.
    Battery {
        /// Bundled scenario names or TOML paths; default is every bundled scenario.
        scenarios: Vec<String>,
        /// Load every TOML file in this directory instead.
        #[arg(long, conflicts_with = "scenarios")]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, printing the normalised form.
    ValidateConfig {
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List the bundled scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means the command ran but a must-pass check failed.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { scenario, overrides, out } => {
            let cfg = runner::resolve(&scenario, &overrides.list())?;
            let (trace, report) = runner::simulate(&cfg)?;
            let dir = runner::output_dir(out.as_deref());
            let a = runner::write_artifacts(&dir, &trace, &report)?;
            print!("{}", runner::summary(&report));
            println!("trace  {}", a.trace.display());
            println!("report {}", a.report.display());
            Ok(report.passed)
        }
        Command::Replay { trace, checkers, report, expect } => {
            let only = (!checkers.is_empty()).then_some(checkers.as_slice());
            let rep = runner::replay(&trace, only)?;
            let bytes = runner::report_json(&rep);
            if let Some(path) = &report {
                std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", runner::summary(&rep));
            if let Some(path) = &expect {
                let want = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                if want != bytes {
                    bail!("report differs from {}", path.display());
                }
                println!("report matches {}", path.display());
            }
            Ok(rep.passed)
        }
        Command::Battery { scenarios, dir, seeds, overrides, out } => {
            let over = overrides.list();
            let configs = match dir {
                Some(d) => runner::load_dir(&d, &over)?,
                None if scenarios.is_empty() => {
                    library::names().map(|n| library::load(n, &over)).collect::<Result<_, _>>()?
                }
                None => scenarios.iter().map(|s| runner::resolve(s, &over)).collect::<Result<_, _>>()?,
            };
            let aggs = runner::battery(&configs, seeds);
            print!("{}", runner::battery_summary(&aggs));
            let path = runner::write_battery(&runner::output_dir(out.as_deref()), &aggs)?;
            println!("battery report {}", path.display());
            Ok(aggs.iter().all(|a| a.must_pass_failures.is_empty() && a.errors.is_empty()))
        }
        Command::ValidateConfig { scenario, overrides } => {
            let cfg = runner::resolve(&scenario, &overrides.list())?;
            print!("{}", cfg.to_toml());
            if cfg.lambda_delta() >= 1.0 {
                eprintln!("warning: λΔ = {} is outside the λΔ < 1 regime", cfg.lambda_delta());
            }
            Ok(true)
        }
        Command::ListScenarios => {
            for name in library::names() {
                let cfg: ScenarioConfig = library::load(name, &[])?;
                println!("{name:<26} {}", cfg.description);
            }
            Ok(true)
        }
    }
}
