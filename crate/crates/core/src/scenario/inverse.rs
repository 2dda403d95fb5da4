//! Stiffness identification from a force–displacement response.

use super::{Check, Outputs, RunReport, ScenarioError};
use crate::config::{ConfigError, ScenarioConfig};
use crate::inverse::{
    read_reference_csv, write_optimization_csv, write_reference_csv, InverseProblem, LossKind, LossSpec, OptimizerState,
};

#[derive(Debug, Clone)]
pub struct InverseSetup {
    pub true_modulus: f64,
    pub pressure: f64,
    pub steps: usize,
    pub cell_size: f64,
    pub initial_factor: f64,
    pub learning_rate: f64,
    pub loss_threshold: f64,
    pub max_iters: usize,
    pub reference: Option<std::path::PathBuf>,
    pub strategy: crate::jacobian::JacobianStrategy,
}

impl InverseSetup {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let inv = cfg.inverse.as_ref().expect("validated");
        if !cfg.geometry.size.is_empty() {
            return Err(ConfigError::Invalid(
                "the inverse scenario uses a fixed 2 m x 2 m half block; only geometry.cell_size may be set".into(),
            ));
        }
        Ok(Self {
            true_modulus: inv.true_modulus.si,
            pressure: cfg.loading.pressure.map(|q| q.si).unwrap_or(10e3),
            steps: cfg.schedule.steps.unwrap_or(5),
            cell_size: cfg.geometry.cell_size.map(|q| q.si).unwrap_or(0.5),
            initial_factor: inv.initial_factor.unwrap_or(0.1),
            learning_rate: inv.learning_rate.unwrap_or(0.2),
            loss_threshold: inv.loss_threshold.unwrap_or(1e-6),
            max_iters: inv.max_iters.unwrap_or(20),
            reference: inv.reference.clone(),
            strategy: cfg.solver.jacobian,
        })
    }

    pub fn problem(&self) -> Result<InverseProblem, ScenarioError> {
        let mut p = InverseProblem::strip_load(self.true_modulus, self.pressure, self.steps, self.cell_size)?;
        p.model.settings.strategy = self.strategy;
        Ok(p)
    }
}

/// Adjoint gradient and its central-difference estimate at `theta`.
pub fn gradient_check(
    problem: &InverseProblem,
    spec: &LossSpec,
    theta: f64,
    step: f64,
) -> Result<(f64, f64), ScenarioError> {
    let sim = problem.simulate(theta)?;
    let (_, adjoint) = problem.gradient(&sim, spec)?;
    let lp = problem.loss(&problem.simulate(theta + step)?, spec);
    let lm = problem.loss(&problem.simulate(theta - step)?, spec);
    Ok((adjoint, (lp - lm) / (2.0 * step)))
}

/// First iterate whose modulus is within `tol` of `target`.
pub fn iterations_to_within(state: &OptimizerState, target: f64, tol: f64) -> Option<usize> {
    state.history.iter().find(|r| (r.modulus - target).abs() <= tol * target).map(|r| r.iteration)
}

pub fn run(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<RunReport, ScenarioError> {
    let setup = InverseSetup::from_config(cfg)?;
    let mut report = RunReport::new(cfg.scenario, cfg.name.clone());
    let problem = setup.problem()?;
    let reference = match &setup.reference {
        Some(path) => read_reference_csv(path)?,
        None => {
            let r = problem.reference(setup.true_modulus)?;
            if let Some(p) = out.path("reference.csv") {
                write_reference_csv(&p, &r)?;
            }
            r
        }
    };
    if reference.len() != setup.steps {
        return Err(ConfigError::Invalid(format!(
            "reference has {} samples but the schedule has {} steps",
            reference.len(),
            setup.steps
        ))
        .into());
    }
    let spec = LossSpec { kind: LossKind::SlopeOfForceDisplacement, reference };
    let theta0 = (setup.initial_factor * setup.true_modulus).ln();
    let state = problem.identify(&spec, theta0, setup.learning_rate, setup.loss_threshold, setup.max_iters)?;
    if let Some(p) = out.path("optimization.csv") {
        write_optimization_csv(&p, &state.history)?;
    }
    report.steps = state.history.len() * setup.steps;

    // Adjoint against central differences at the initial guess and the
    // first iterate.
    let mut checks_at = vec![("initial guess", theta0)];
    if let Some(r) = state.history.get(1) {
        checks_at.push(("first iterate", r.theta));
    }
    let mut rows = Vec::new();
    for (label, theta) in checks_at {
        let (adjoint, fd) = gradient_check(&problem, &spec, theta, 1e-4)?;
        let rel = (adjoint - fd).abs() / fd.abs().max(f64::MIN_POSITIVE);
        rows.push((theta, adjoint, fd, rel));
        report.checks.push(Check::at_most(format!("adjoint vs central difference at the {label}"), rel, 1e-4));
    }
    if let Some(p) = out.path("gradient_check.csv") {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["theta", "adjoint", "central_difference", "relative_difference"])?;
        for r in &rows {
            w.write_record([r.0, r.1, r.2, r.3].map(|v| format!("{v:.12e}")))?;
        }
        w.flush()?;
    }
    let last = state.history.last().expect("at least one iterate");
    report.push_metric("recovered modulus [Pa]", last.modulus);
    report.push_metric("final loss", last.loss);
    report.push_metric("optimizer iterations", last.iteration as f64);
    let reached = iterations_to_within(&state, setup.true_modulus, 0.01);
    report.checks.push(Check::at_most(
        "iterations to recover E within 1%",
        reached.map(|k| k as f64).unwrap_or(f64::INFINITY),
        20.0,
    ));
    report.checks.push(Check::relative("recovered modulus", last.modulus, setup.true_modulus, 0.01));
    Ok(report)
}
