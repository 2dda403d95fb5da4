//! Self-weight compaction of a 1D column.

use super::{
    cell_count, loglog_slope, solver_settings, tail_slope, Check, Outputs, RunReport, ScenarioError, StepSummary,
};
use crate::config::{ConfigError, ScenarioConfig};
use crate::constitutive::Material;
use crate::mpm::{
    fill_box, write_iteration_log, write_particles_csv, DirichletRule, Grid, LoadSchedule, MpmModel, Side,
    SolverSettings, StepReport,
};
use crate::shape::ShapeFunctionKind;

#[derive(Debug, Clone)]
pub struct BarSetup {
    pub length: f64,
    pub cells: usize,
    pub particles_per_cell: usize,
    pub material: Material,
    pub density: f64,
    pub gravity: f64,
    pub steps: usize,
    pub kind: ShapeFunctionKind,
    pub settings: SolverSettings,
}

impl BarSetup {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let length = cfg
            .geometry
            .size
            .first()
            .map(|q| q.si)
            .ok_or_else(|| ConfigError::Invalid("bar needs geometry.size".into()))?;
        let h = cfg
            .geometry
            .cell_size
            .map(|q| q.si)
            .ok_or_else(|| ConfigError::Invalid("bar needs geometry.cell_size".into()))?;
        let mat = cfg.material.as_ref().expect("validated");
        Ok(Self {
            length,
            cells: cell_count(length, h)?,
            particles_per_cell: cfg.geometry.particles_per_cell.unwrap_or(4),
            material: mat.to_material()?,
            density: mat
                .density
                .map(|q| q.si)
                .ok_or_else(|| ConfigError::Invalid("bar needs material.density".into()))?,
            gravity: cfg.loading.gravity.map(|q| q.si).unwrap_or(9.81),
            steps: cfg.schedule.steps.unwrap_or(40),
            kind: cfg.geometry.shape,
            settings: solver_settings(cfg),
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.length / self.cells as f64
    }

    /// Column on `[0, l0]` along axis 0 with one spare cell on each side,
    /// base fixed, gravity along −x.
    pub fn build(&self) -> Result<MpmModel, ScenarioError> {
        let h = self.cell_size();
        let grid = Grid::new(1, [-h, 0.0, 0.0], [h, 1.0, 1.0], [self.cells + 2, 0, 0])?;
        let mut particles =
            fill_box(1, [0.0; 3], [self.length, 0.0, 0.0], [h, 1.0, 1.0], self.particles_per_cell, self.density, 0);
        for p in &mut particles {
            p.gravity = [-self.gravity, 0.0, 0.0];
        }
        let rules = vec![DirichletRule::new(0, Side::Le, 0.0, &[0])];
        Ok(MpmModel::new(grid, self.kind, vec![self.material], particles, rules, self.settings)?)
    }
}

/// `σ_a = −ρ0 g (l0 − Y)` at initial height `Y` (compression negative).
pub fn analytical_stress(density: f64, gravity: f64, length: f64, y: f64) -> f64 {
    -density * gravity * (length - y)
}

/// `Σ_p |σ_p − σ_a(Y_p)| V0_p / Σ_p ρ0 g l0 V0_p`.
pub fn stress_error(model: &MpmModel, setup: &BarSetup) -> f64 {
    let peak = setup.density * setup.gravity * setup.length;
    let (mut num, mut den) = (0.0, 0.0);
    for p in &model.particles {
        let sa = analytical_stress(setup.density, setup.gravity, setup.length, p.x0[0]);
        num += (p.sigma[0][0] - sa).abs() * p.volume0;
        den += peak * p.volume0;
    }
    num / den
}

#[derive(Debug, Clone)]
pub struct BarResult {
    pub model: MpmModel,
    pub reports: Vec<StepReport>,
    pub error: f64,
}

pub fn simulate(setup: &BarSetup) -> Result<BarResult, ScenarioError> {
    let mut model = setup.build()?;
    let reports = model.run(&LoadSchedule::linear(setup.steps), |_, _| Ok(()))?;
    let error = stress_error(&model, setup);
    Ok(BarResult { model, reports, error })
}

/// Largest final relative residual over the steps (0 for steps accepted
/// on the absolute floor).
pub fn max_final_residual(reports: &[StepReport]) -> f64 {
    reports.iter().map(|r| r.residuals.last().copied().unwrap_or(0.0)).fold(0.0, f64::max)
}

/// Smallest convergence-order estimate over steps with a usable tail.
pub fn min_tail_slope(reports: &[StepReport]) -> Option<f64> {
    reports.iter().filter_map(|r| tail_slope(&r.residuals, r.roundoff_floor)).min_by(|a, b| a.total_cmp(b))
}

pub fn run(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<RunReport, ScenarioError> {
    let setup = BarSetup::from_config(cfg)?;
    let mut report = RunReport::new(cfg.scenario, cfg.name.clone());
    let mut model = setup.build()?;
    let schedule = LoadSchedule::linear(setup.steps);
    let mut particles_csv = match out.path("particles.csv") {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    let snapshots = &cfg.schedule.snapshots;
    let reports = model.run(&schedule, |m, r| {
        if let Some(w) = particles_csv.as_mut() {
            if snapshots.is_empty() || snapshots.contains(&r.step) || r.step == schedule.steps() {
                write_particles_csv(w, r.step, &m.particles)?;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = particles_csv {
        w.flush()?;
    }
    let error = stress_error(&model, &setup);
    if let Some(p) = out.path("stress.csv") {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["y0", "y", "sigma_yy", "sigma_analytical"])?;
        for part in &model.particles {
            let sa = analytical_stress(setup.density, setup.gravity, setup.length, part.x0[0]);
            w.write_record([part.x0[0], part.x[0], part.sigma[0][0], sa].map(|v| format!("{v:.10e}")))?;
        }
        w.flush()?;
    }
    if let Some(p) = out.path("iterations.csv") {
        write_iteration_log(&p, &reports)?;
    }
    report.steps = reports.len();
    report.timing.add_steps(&reports);
    report.iterations = reports.iter().map(StepSummary::from).collect();
    let h = setup.cell_size();
    report.push_metric("cell size [m]", h);
    report.push_metric("particles", model.particles.len() as f64);
    report.checks.push(Check::at_most(format!("stress error at h = {h:.6} m"), error, 2e-2));
    let max_iters = reports.iter().map(|r| r.iterations).max().unwrap_or(0);
    report.checks.push(Check::at_most("max Newton iterations per step", max_iters as f64, 4.0));
    report.checks.push(Check::at_most("max final relative residual", max_final_residual(&reports), setup.settings.tol));
    report.checks.push(Check::at_least(
        "convergence order of the Newton tail",
        min_tail_slope(&reports).unwrap_or(f64::NAN),
        1.8,
    ));
    if !cfg.study.cell_sizes.is_empty() {
        let mut rows = Vec::new();
        for hq in &cfg.study.cell_sizes {
            let mut level = setup.clone();
            level.cells = cell_count(setup.length, hq.si)?;
            let err = if level.cells == setup.cells { error } else { simulate(&level)?.error };
            rows.push((level.cell_size(), err));
        }
        if let Some(p) = out.path("convergence.csv") {
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["cell_size", "relative_error"])?;
            for (h, e) in &rows {
                w.write_record(&[format!("{h:.10e}"), format!("{e:.10e}")])?;
            }
            w.flush()?;
        }
        for (h, e) in &rows {
            report.push_metric(format!("error at h = {h:.6} m"), *e);
        }
        if rows.len() >= 2 {
            let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let es: Vec<f64> = rows.iter().map(|r| r.1).collect();
            report.checks.push(Check::between("spatial convergence rate", loglog_slope(&hs, &es), 1.0, 2.0));
        }
    }
    Ok(report)
}
