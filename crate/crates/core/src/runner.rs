//! Running scenarios: artifacts on disk, trace replay and seed batteries.

use crate::analytics::{analyze, analyze_with, compute_yz, AnalysisError, Cadence, IterationRow, Report};
use crate::library;
use crate::scenario::{Checker, ConfigError, ScenarioConfig};
use crate::sim;
use crate::trace::{Trace, TraceError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Default output directory, overridden by [`OUTPUT_DIR_ENV`].
pub const DEFAULT_OUTPUT_DIR: &str = "clc-out";
pub const OUTPUT_DIR_ENV: &str = "CLC_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

pub fn output_dir(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR), PathBuf::from),
    }
}

/// A bundled scenario name or a path to a TOML file.
pub fn resolve(scenario: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    if library::source(scenario).is_some() {
        library::load(scenario, overrides)
    } else {
        ScenarioConfig::load(Path::new(scenario), overrides)
    }
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<(Trace, Report), RunError> {
    let trace = sim::run(cfg);
    let report = analyze(&trace)?;
    Ok((trace, report))
}

/// Canonical report bytes; identical for identical traces.
pub fn report_json(report: &Report) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(report).expect("reports serialize");
    v.push(b'\n');
    v
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifacts {
    pub trace: PathBuf,
    pub report: PathBuf,
    pub slots: PathBuf,
    pub cadence: PathBuf,
    pub recency: PathBuf,
    pub latency: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path, name: &str, seed: u64) -> Self {
        let f = |ext: &str| dir.join(format!("{name}-seed{seed}.{ext}"));
        Artifacts {
            trace: f("trace.jsonl"),
            report: f("report.json"),
            slots: f("slots.csv"),
            cadence: f("cadence.csv"),
            recency: f("recency.csv"),
            latency: f("latency.csv"),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), RunError> {
    let csv_err = |e: csv::Error| RunError::Csv { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_artifacts(dir: &Path, trace: &Trace, report: &Report) -> Result<Artifacts, RunError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let a = Artifacts::in_dir(dir, &report.scenario, report.seed);
    let f = File::create(&a.trace).map_err(io_err(&a.trace))?;
    trace.write_jsonl(BufWriter::new(f))?;
    std::fs::write(&a.report, report_json(report)).map_err(io_err(&a.report))?;
    write_csv(&a.slots, compute_yz(trace))?;
    write_csv(&a.cadence, &report.cadence.iterations)?;
    write_csv(&a.recency, &report.recency)?;
    write_csv(&a.latency, &report.cadence.periods)?;
    Ok(a)
}

pub fn read_trace(path: &Path) -> Result<Trace, RunError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(Trace::read_jsonl(BufReader::new(f))?)
}

/// Re-runs analytics on a stored trace.
pub fn replay(path: &Path, checkers: Option<&[Checker]>) -> Result<Report, RunError> {
    let trace = read_trace(path)?;
    Ok(analyze_with(&trace, checkers)?)
}

/// The config with `seed` replaced.
pub fn with_seed(cfg: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}

/// Seeds `cfg.seed, cfg.seed + 1, …`.
pub fn seeds(cfg: &ScenarioConfig, count: u64) -> Vec<u64> {
    (0..count).map(|i| cfg.seed + i).collect()
}

/// Applies `f` to one config per seed, in parallel, results in seed order.
pub fn par_seeds<T: Send>(cfg: &ScenarioConfig, count: u64, f: impl Fn(ScenarioConfig) -> T + Sync) -> Vec<T> {
    seeds(cfg, count).into_par_iter().map(|s| f(with_seed(cfg, s))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckerFrequency {
    pub checker: Checker,
    pub must_pass: bool,
    /// Runs with at least one violation.
    pub runs_violated: usize,
    pub frequency: f64,
    pub total_violations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Quantiles::default();
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Quantiles { count: v.len(), min: v[0], p50: q(0.5), p95: q(0.95), max: v[v.len() - 1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub m: u32,
    pub threshold: f64,
    pub fraction: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub errors: Vec<String>,
    pub must_pass_failures: Vec<u64>,
    pub checkers: Vec<CheckerFrequency>,
    pub slots: usize,
    pub y_mean: f64,
    pub ybar: f64,
    pub yz_mean: f64,
    pub lambda_delta: f64,
    /// Inter-checkpoint gaps, first iteration excluded.
    pub gaps: Quantiles,
    /// Mean certificate period, first iteration excluded.
    pub mean_periods: f64,
    pub latency: Quantiles,
    pub halt_spread: Quantiles,
    pub adversarial_leader_frequency: f64,
    pub recency: Quantiles,
    pub recency_tail: Vec<TailRow>,
}

impl ScenarioAggregate {
    pub fn frequency(&self, checker: Checker) -> f64 {
        self.checkers.iter().find(|c| c.checker == checker).map_or(0.0, |c| c.frequency)
    }
}

/// Iterations after the first; the first one also waits for the initial chain to reach checkpoint depth.
pub fn steady(c: &Cadence) -> impl Iterator<Item = &IterationRow> {
    c.iterations.iter().filter(|r| r.iteration > 1)
}

pub fn aggregate(cfg: &ScenarioConfig, runs: &[(u64, Result<Report, String>)]) -> ScenarioAggregate {
    let reports: Vec<&Report> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let errors = runs.iter().filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e}"))).collect();
    let n = reports.len().max(1) as f64;
    let mut checkers: Vec<CheckerFrequency> = Vec::new();
    for rep in &reports {
        for c in &rep.checks {
            let e = match checkers.iter_mut().find(|f| f.checker == c.checker) {
                Some(e) => e,
                None => {
                    checkers.push(CheckerFrequency {
                        checker: c.checker,
                        must_pass: c.must_pass,
                        runs_violated: 0,
                        frequency: 0.0,
                        total_violations: 0,
                    });
                    checkers.last_mut().expect("just pushed")
                }
            };
            e.runs_violated += usize::from(c.violations > 0);
            e.total_violations += c.violations;
        }
    }
    for c in &mut checkers {
        c.frequency = c.runs_violated as f64 / n;
    }
    checkers.sort_by_key(|c| c.checker);
    let slots: usize = reports.iter().map(|r| r.slots.slots).sum();
    let weighted =
        |f: fn(&Report) -> f64| reports.iter().map(|r| f(r) * r.slots.slots as f64).sum::<f64>() / slots.max(1) as f64;
    let iters = || reports.iter().flat_map(|r| steady(&r.cadence));
    let periods: Vec<f64> = iters().map(|r| r.period as f64).collect();
    let leader_periods: Vec<bool> = reports.iter().flat_map(|r| r.cadence.periods.iter().map(|p| p.honest)).collect();
    let beta_leader = leader_periods.iter().filter(|h| !**h).count() as f64 / leader_periods.len().max(1) as f64;
    let recency: Vec<f64> =
        reports.iter().flat_map(|r| r.recency.iter().filter(|x| x.after_gst).filter_map(|x| x.recency)).collect();
    let recency_tail = (1..=5)
        .map(|m| {
            let threshold = 8.0 * m as f64 * cfg.delta;
            let over = recency.iter().filter(|&&r| r > threshold).count();
            TailRow {
                m,
                threshold,
                fraction: over as f64 / recency.len().max(1) as f64,
                bound: 1.5 * beta_leader.powi(m as i32),
            }
        })
        .collect();
    ScenarioAggregate {
        scenario: cfg.name.clone(),
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        errors,
        must_pass_failures: runs
            .iter()
            .filter(|(_, r)| r.as_ref().map_or(true, |r| !r.passed))
            .map(|(s, _)| *s)
            .collect(),
        checkers,
        slots,
        y_mean: weighted(|r| r.slots.y_mean),
        ybar: reports.first().map_or(0.0, |r| r.slots.ybar),
        yz_mean: weighted(|r| r.slots.y_mean + r.slots.z_mean),
        lambda_delta: cfg.lambda_delta(),
        gaps: Quantiles::of(iters().filter_map(|r| r.gap).collect()),
        mean_periods: periods.iter().sum::<f64>() / periods.len().max(1) as f64,
        latency: Quantiles::of(iters().filter_map(|r| r.latency).collect()),
        halt_spread: Quantiles::of(iters().map(|r| r.last_halt - r.first_halt).collect()),
        adversarial_leader_frequency: beta_leader,
        recency: Quantiles::of(recency.clone()),
        recency_tail,
    }
}

/// Runs `count` seeds of every scenario and aggregates them.
pub fn battery(configs: &[ScenarioConfig], count: u64) -> Vec<ScenarioAggregate> {
    configs
        .iter()
        .map(|cfg| {
            let runs = par_seeds(cfg, count, |c| {
                let seed = c.seed;
                (seed, analyze(&sim::run(&c)).map_err(|e| e.to_string()))
            });
            aggregate(cfg, &runs)
        })
        .collect()
}

/// Every `*.toml` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path, overrides: &[String]) -> Result<Vec<ScenarioConfig>, RunError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths.iter().map(|p| ScenarioConfig::load(p, overrides)).collect::<Result<_, _>>()?)
}

/// Short plain-text summary of a single run.
pub fn summary(report: &Report) -> String {
    let mut s = format!("scenario {} seed {}: {} records\n", report.scenario, report.seed, report.records);
    for c in &report.checks {
        let verdict = if c.passed { "ok" } else { "VIOLATED" };
        let must = if c.must_pass { " (must pass)" } else { "" };
        s += &format!("  {:<24} {verdict:<9} {:>6}{must}\n", c.checker.to_string(), c.violations);
    }
    s += &format!(
        "  checkpoints {}  Y mean {:.5} (expected {:.5})\n",
        report.cadence.iterations.len(),
        report.slots.y_mean,
        report.slots.ybar
    );
    s += if report.passed { "PASS\n" } else { "FAIL\n" };
    s
}

pub fn battery_summary(aggs: &[ScenarioAggregate]) -> String {
    let mut s = String::new();
    for a in aggs {
        s += &format!("scenario {} over {} seeds", a.scenario, a.seeds.len());
        if !a.must_pass_failures.is_empty() {
            s += &format!(", must-pass failures on seeds {:?}", a.must_pass_failures);
        }
        s += "\n";
        for c in &a.checkers {
            s += &format!("  {:<24} {:>6.2}  ({} runs)\n", c.checker.to_string(), c.frequency, c.runs_violated);
        }
        s +=
            &format!("  Y mean {:.5} vs {:.5}, Y+Z mean {:.5} vs {:.5}\n", a.y_mean, a.ybar, a.yz_mean, a.lambda_delta);
        s += &format!(
            "  gaps p50 {:.1} p95 {:.1} max {:.1}, mean periods {:.3}, adversarial leaders {:.3}\n",
            a.gaps.p50, a.gaps.p95, a.gaps.max, a.mean_periods, a.adversarial_leader_frequency
        );
        for t in &a.recency_tail {
            s += &format!("  P(recency > {}) = {:.4}  (1.5·β′^{} = {:.4})\n", t.threshold, t.fraction, t.m, t.bound);
        }
    }
    s
}

pub fn write_battery(dir: &Path, aggs: &[ScenarioAggregate]) -> Result<PathBuf, RunError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("battery.json");
    let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut f, aggs)
        .map_err(|e| RunError::Io { path: path.display().to_string(), source: e.into() })?;
    f.write_all(b"\n").map_err(io_err(&path))?;
    Ok(path)
}
