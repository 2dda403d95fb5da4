//! Scenario runners behind the command-line driver.
//!
//! Each runner builds its model from a [`ScenarioConfig`], runs it, writes
//! CSV outputs when an output directory is configured and returns a
//! [`RunReport`] with its built-in checks evaluated against independent
//! oracles.

pub mod bar;
pub mod bench;
pub mod cantilever;
pub mod consolidation;
pub mod inverse;
pub mod triaxial;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig, ScenarioKind};
use crate::constitutive::ConstitutiveError;
use crate::inverse::InverseError;
use crate::jacobian::JacobianStrategy;
use crate::mpm::{MpmError, SolverSettings, StepReport};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mpm(#[from] MpmError),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e.to_string())
    }
}

impl From<csv::Error> for ScenarioError {
    fn from(e: csv::Error) -> Self {
        ScenarioError::Io(e.to_string())
    }
}

/// Process exit codes of the command-line driver.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => EXIT_CONFIG,
            ScenarioError::Mpm(MpmError::Config(_)) => EXIT_CONFIG,
            ScenarioError::Mpm(e) if e.is_nonconvergence() => EXIT_NONCONVERGENCE,
            ScenarioError::Constitutive(e) if e.is_nonconvergence() => EXIT_NONCONVERGENCE,
            ScenarioError::Constitutive(ConstitutiveError::InvalidParameter(_)) => EXIT_CONFIG,
            ScenarioError::Inverse(InverseError::Forward(e)) if e.is_nonconvergence() => EXIT_NONCONVERGENCE,
            ScenarioError::Inverse(InverseError::Divergence { .. }) => EXIT_NONCONVERGENCE,
            ScenarioError::Inverse(InverseError::Config(_)) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

/// How `measured` is compared with `expected`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `measured ≤ expected`.
    AtMost,
    /// `measured ≥ expected`.
    AtLeast,
    /// `|measured − expected| ≤ tol · |expected|`.
    Relative,
    /// `|measured − expected| ≤ tol`.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub tol: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, measured: f64, expected: f64, tol: f64, relation: Relation) -> Self {
        let pass = measured.is_finite()
            && match relation {
                Relation::AtMost => measured <= expected,
                Relation::AtLeast => measured >= expected,
                Relation::Relative => (measured - expected).abs() <= tol * expected.abs(),
                Relation::Absolute => (measured - expected).abs() <= tol,
            };
        Self { name: name.into(), measured, expected, tol, relation, pass }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(name, measured, bound, 0.0, Relation::AtMost)
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(name, measured, bound, 0.0, Relation::AtLeast)
    }

    pub fn relative(name: impl Into<String>, measured: f64, expected: f64, tol: f64) -> Self {
        Self::new(name, measured, expected, tol, Relation::Relative)
    }

    /// `lo ≤ measured ≤ hi`.
    pub fn between(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, measured, 0.5 * (lo + hi), 0.5 * (hi - lo), Relation::Absolute)
    }

    /// A yes/no property, recorded as 1 or 0.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, 1.0, 0.0, Relation::Absolute)
    }

    pub fn describe(&self) -> String {
        let cmp = match self.relation {
            Relation::AtMost => format!("<= {:.4e}", self.expected),
            Relation::AtLeast => format!(">= {:.4e}", self.expected),
            Relation::Relative => format!("{:.4e} ± {:.1}%", self.expected, 100.0 * self.tol),
            Relation::Absolute => format!("{:.4e} ± {:.4e}", self.expected, self.tol),
        };
        format!(
            "{} {}: measured {:.6e}, expected {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            cmp
        )
    }
}

/// Condensed Newton log of one load step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub load_scale: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub roundoff_floor: f64,
}

impl From<&StepReport> for StepSummary {
    fn from(r: &StepReport) -> Self {
        Self {
            step: r.step,
            load_scale: r.load_scale,
            iterations: r.iterations,
            residuals: r.residuals.clone(),
            roundoff_floor: r.roundoff_floor,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timing {
    pub total_s: f64,
    /// Time spent extracting Jacobians from tapes.
    pub diff_s: f64,
    /// Time spent in linear solves.
    pub solve_s: f64,
}

impl Timing {
    pub fn add_steps(&mut self, reports: &[StepReport]) {
        for r in reports {
            self.diff_s += r.jacobian.diff_seconds;
            self.solve_s += r.solve_seconds;
        }
    }
}

/// Machine-readable result of one scenario run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub steps: usize,
    pub wall_s: f64,
    pub checks: Vec<Check>,
    pub timing: Timing,
    /// Informational quantities without pass/fail semantics.
    pub metrics: Vec<(String, f64)>,
    pub iterations: Vec<StepSummary>,
    pub outputs: Vec<PathBuf>,
}

impl RunReport {
    pub fn new(scenario: ScenarioKind, name: Option<String>) -> Self {
        Self { scenario: scenario.name().to_string(), name, ..Self::default() }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn push_metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes the JSON summary via a temporary file and a rename, so a
    /// partially written summary is never observed.
    pub fn write_json(&self, path: &Path) -> Result<(), ScenarioError> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Output directory handling shared by the runners.
#[derive(Debug, Clone)]
pub struct Outputs {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        if let Some(dir) = &cfg.output.dir {
            fs::create_dir_all(dir)?;
        }
        Ok(Self { dir: cfg.output.dir.clone(), written: Vec::new() })
    }

    /// Path for `file` if outputs are enabled; records it in the manifest.
    pub fn path(&mut self, file: &str) -> Option<PathBuf> {
        let p = self.dir.as_ref()?.join(file);
        self.written.push(p.clone());
        Some(p)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn into_manifest(self) -> Vec<PathBuf> {
        self.written
    }
}

/// Solver settings from the `[solver]` block.
pub fn solver_settings(cfg: &ScenarioConfig) -> SolverSettings {
    SolverSettings {
        tol: cfg.solver.tol,
        max_iters: cfg.solver.max_iters,
        strategy: cfg.solver.jacobian,
        ..SolverSettings::default()
    }
}

/// Runs the configured scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    run_with(cfg, None)
}

/// Runs the scenario with the Jacobian strategy forced to `strategy`; the
/// Jacobian benchmark then times only that strategy.
pub fn bench(cfg: &ScenarioConfig, strategy: JacobianStrategy) -> Result<RunReport, ScenarioError> {
    let mut cfg = cfg.clone();
    cfg.solver.jacobian = strategy;
    run_with(&cfg, Some(strategy))
}

fn run_with(cfg: &ScenarioConfig, only: Option<JacobianStrategy>) -> Result<RunReport, ScenarioError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs::new(cfg)?;
    let mut report = match cfg.scenario {
        ScenarioKind::Triaxial => triaxial::run(cfg, &mut out)?,
        ScenarioKind::Bar => bar::run(cfg, &mut out)?,
        ScenarioKind::Cantilever => cantilever::run(cfg, &mut out)?,
        ScenarioKind::Consolidation => consolidation::run(cfg, &mut out)?,
        ScenarioKind::Inverse => inverse::run(cfg, &mut out)?,
        ScenarioKind::JacobianBench => bench::run(cfg, only, &mut out)?,
    };
    report.wall_s = start.elapsed().as_secs_f64();
    report.timing.total_s = report.wall_s;
    let summary = out.path("summary.json");
    report.outputs = out.into_manifest();
    if let Some(p) = summary {
        report.write_json(&p)?;
    }
    Ok(report)
}

/// Log-residual slope over the last two iterations,
/// `(ln r_k − ln r_{k−1}) / (ln r_{k−1} − ln r_{k−2})`, using only
/// residuals above `floor`; about 2 for quadratic convergence.
pub fn tail_slope(residuals: &[f64], floor: f64) -> Option<f64> {
    let usable: Vec<f64> = residuals.iter().copied().filter(|&r| r > floor && r > 0.0).collect();
    if usable.len() < 3 {
        return None;
    }
    let n = usable.len();
    let (a, b, c) = (usable[n - 3].ln(), usable[n - 2].ln(), usable[n - 1].ln());
    if b == a {
        return None;
    }
    Some((c - b) / (b - a))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Number of cells of size `h` covering `length`, rejecting sizes that do
/// not divide it.
pub fn cell_count(length: f64, h: f64) -> Result<usize, ConfigError> {
    let n = (length / h).round();
    if n < 1.0 || ((n * h - length) / length).abs() > 1e-9 {
        return Err(ConfigError::Invalid(format!("cell size {h} does not divide the extent {length}")));
    }
    Ok(n as usize)
}
