//! Plane-strain cantilever under an end load.

use super::{cell_count, solver_settings, Check, Outputs, RunReport, ScenarioError, StepSummary};
use crate::config::{ConfigError, ScenarioConfig};
use crate::constitutive::Material;
use crate::mpm::{
    fill_box, write_iteration_log, write_particles_csv, DirichletRule, Grid, LoadSchedule, MpmModel, Side,
    SolverSettings, StepReport,
};
use crate::shape::ShapeFunctionKind;

#[derive(Debug, Clone)]
pub struct CantileverSetup {
    pub length: f64,
    pub depth: f64,
    pub cell_size: f64,
    pub particles_per_cell: usize,
    pub material: Material,
    pub density: f64,
    /// Total end load per unit thickness (acts downwards).
    pub force: f64,
    pub steps: usize,
    pub kind: ShapeFunctionKind,
    pub settings: SolverSettings,
}

impl CantileverSetup {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let size = &cfg.geometry.size;
        if size.len() != 2 {
            return Err(ConfigError::Invalid("cantilever needs geometry.size = [length, depth]".into()));
        }
        let mat = cfg.material.as_ref().ok_or_else(|| ConfigError::Invalid("missing [material]".into()))?;
        let setup = Self {
            length: size[0].si,
            depth: size[1].si,
            cell_size: cfg
                .geometry
                .cell_size
                .map(|q| q.si)
                .ok_or_else(|| ConfigError::Invalid("missing geometry.cell_size".into()))?,
            particles_per_cell: cfg.geometry.particles_per_cell.unwrap_or(2),
            material: mat.to_material()?,
            density: mat.density.map(|q| q.si).unwrap_or(1000.0),
            force: cfg
                .loading
                .force
                .map(|q| q.si)
                .ok_or_else(|| ConfigError::Invalid("cantilever needs loading.force".into()))?,
            steps: cfg.schedule.steps.unwrap_or(50),
            kind: cfg.geometry.shape,
            settings: solver_settings(cfg),
        };
        setup.check_divisible()?;
        Ok(setup)
    }

    fn check_divisible(&self) -> Result<(), ConfigError> {
        cell_count(self.length, self.cell_size)?;
        cell_count(self.depth, self.cell_size)?;
        Ok(())
    }

    pub fn with_cell_size(&self, h: f64) -> Result<Self, ConfigError> {
        let s = Self { cell_size: h, ..self.clone() };
        s.check_divisible()?;
        Ok(s)
    }

    /// Beam on `[0, L] × [0, d]`, clamped at `x = 0`; the grid leaves room
    /// for a deflection of the full span below the beam.
    pub fn build(&self) -> Result<(MpmModel, Vec<usize>), ScenarioError> {
        let h = self.cell_size;
        let nl = cell_count(self.length, h)?;
        let nd = cell_count(self.depth, h)?;
        let origin = [-2.0 * h, -(nl as f64 + 2.0) * h, 0.0];
        let grid = Grid::new(2, origin, [h, h, 1.0], [nl + 4, nl + nd + 4, 0])?;
        let mut particles = fill_box(
            2,
            [0.0; 3],
            [self.length, self.depth, 0.0],
            [h, h, 1.0],
            self.particles_per_cell,
            self.density,
            0,
        );
        let dx = h / self.particles_per_cell as f64;
        let tip: Vec<usize> = (0..particles.len()).filter(|&i| particles[i].x0[0] > self.length - dx).collect();
        for &i in &tip {
            particles[i].load = [0.0, -self.force / tip.len() as f64, 0.0];
        }
        let rules = vec![DirichletRule::new(0, Side::Le, 0.0, &[0, 1])];
        let model = MpmModel::new(grid, self.kind, vec![self.material], particles, rules, self.settings)?;
        Ok((model, tip))
    }

    /// Plane-strain bending stiffness `E′ I` per unit thickness.
    pub fn bending_stiffness(&self) -> Result<f64, ConfigError> {
        let p = match self.material {
            Material::Hencky(p) | Material::NeoHookean(p) | Material::LinearElastic(p) => p,
            _ => return Err(ConfigError::Invalid("cantilever oracle needs an elastic material".into())),
        };
        let e_prime = p.youngs_modulus / (1.0 - p.poisson_ratio * p.poisson_ratio);
        Ok(e_prime * self.depth.powi(3) / 12.0)
    }
}

/// Small-deflection tip deflection `F L³ / (3 EI)`.
pub fn euler_bernoulli_tip(force: f64, length: f64, ei: f64) -> f64 {
    force * length.powi(3) / (3.0 * ei)
}

/// Inextensible elastica of a cantilever with a vertical dead load at the
/// tip, load parameter `α = F L² / EI`. Returns the tip deflection and the
/// horizontal tip shortening, both divided by `L`.
///
/// Solves `θ'' = −α cos θ`, `θ(0) = 0`, `θ'(1) = 0` by shooting on `θ'(0)`.
pub fn elastica_tip(alpha: f64) -> (f64, f64) {
    if alpha == 0.0 {
        return (0.0, 0.0);
    }
    let shoot = |k0: f64| -> [f64; 4] {
        let n = 4000;
        let ds = 1.0 / n as f64;
        let rhs = |y: [f64; 4]| [y[1], -alpha * y[0].cos(), y[0].cos(), y[0].sin()];
        let mut y = [0.0, k0, 0.0, 0.0];
        for _ in 0..n {
            let k1 = rhs(y);
            let k2 = rhs(std::array::from_fn(|i| y[i] + 0.5 * ds * k1[i]));
            let k3 = rhs(std::array::from_fn(|i| y[i] + 0.5 * ds * k2[i]));
            let k4 = rhs(std::array::from_fn(|i| y[i] + ds * k3[i]));
            y = std::array::from_fn(|i| y[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        y
    };
    // θ'(1) is negative for θ'(0) = 0 and non-negative for θ'(0) = α.
    let (mut lo, mut hi) = (0.0, alpha);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shoot(mid)[1] < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * alpha {
            break;
        }
    }
    let y = shoot(0.5 * (lo + hi));
    (y[3], 1.0 - y[2])
}

/// Mean displacement of the tip particle set.
pub fn tip_displacement(model: &MpmModel, tip: &[usize]) -> [f64; 2] {
    let mut u = [0.0; 2];
    for &i in tip {
        let d = model.particles[i].displacement();
        u[0] += d[0];
        u[1] += d[1];
    }
    u.map(|v| v / tip.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TipSample {
    pub step: usize,
    pub load_scale: f64,
    pub displacement: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct CantileverResult {
    pub model: MpmModel,
    pub reports: Vec<StepReport>,
    pub tip: Vec<TipSample>,
}

impl CantileverResult {
    pub fn final_tip(&self) -> [f64; 2] {
        self.tip.last().map(|t| t.displacement).unwrap_or([0.0; 2])
    }
}

/// Runs the full schedule, calling `snapshot` after each step.
pub fn simulate_with(
    setup: &CantileverSetup,
    mut snapshot: impl FnMut(&MpmModel, &StepReport) -> Result<(), crate::mpm::MpmError>,
) -> Result<CantileverResult, ScenarioError> {
    let (mut model, tip_set) = setup.build()?;
    let mut tip = Vec::with_capacity(setup.steps);
    let reports = model.run(&LoadSchedule::linear(setup.steps), |m, r| {
        tip.push(TipSample { step: r.step, load_scale: r.load_scale, displacement: tip_displacement(m, &tip_set) });
        snapshot(m, r)
    })?;
    Ok(CantileverResult { model, reports, tip })
}

pub fn simulate(setup: &CantileverSetup) -> Result<CantileverResult, ScenarioError> {
    simulate_with(setup, |_, _| Ok(()))
}

/// Relative change of the final tip displacement vector between two runs.
pub fn tip_change(coarse: [f64; 2], fine: [f64; 2]) -> f64 {
    let d = ((coarse[0] - fine[0]).powi(2) + (coarse[1] - fine[1]).powi(2)).sqrt();
    d / (fine[0].powi(2) + fine[1].powi(2)).sqrt()
}

pub fn run(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<RunReport, ScenarioError> {
    let setup = CantileverSetup::from_config(cfg)?;
    let ei = setup.bending_stiffness()?;
    let mut report = RunReport::new(cfg.scenario, cfg.name.clone());
    let snapshots = cfg.schedule.snapshots.clone();
    let dir = out.dir().map(|d| d.to_path_buf());
    let mut written = Vec::new();
    let result = simulate_with(&setup, |m, r| {
        if let Some(dir) = &dir {
            if snapshots.contains(&r.step) {
                let p = dir.join(format!("deformed_step{:03}.csv", r.step));
                let mut w = csv::Writer::from_path(&p)?;
                write_particles_csv(&mut w, r.step, &m.particles)?;
                w.flush()?;
                written.push(p);
            }
        }
        Ok(())
    })?;
    for p in written {
        if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
            out.path(name);
        }
    }
    if let Some(p) = out.path("iterations.csv") {
        write_iteration_log(&p, &result.reports)?;
    }
    let oracle = |scale: f64| {
        let f = scale * setup.force;
        let eb = euler_bernoulli_tip(f, setup.length, ei);
        let (el, _) = elastica_tip(f * setup.length * setup.length / ei);
        (eb, el * setup.length)
    };
    if let Some(p) = out.path("tip.csv") {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["step", "load_scale", "force", "ux", "uy", "euler_bernoulli", "elastica"])?;
        for t in &result.tip {
            let (eb, el) = oracle(t.load_scale);
            w.write_record(&[
                t.step.to_string(),
                format!("{:.10e}", t.load_scale),
                format!("{:.10e}", t.load_scale * setup.force),
                format!("{:.10e}", t.displacement[0]),
                format!("{:.10e}", t.displacement[1]),
                format!("{:.10e}", -eb),
                format!("{:.10e}", -el),
            ])?;
        }
        w.flush()?;
    }
    report.steps = result.reports.len();
    report.timing.add_steps(&result.reports);
    report.iterations = result.reports.iter().map(StepSummary::from).collect();
    report.push_metric("particles", result.model.particles.len() as f64);
    let tip = result.final_tip();
    report.push_metric("final tip ux [m]", tip[0]);
    report.push_metric("final tip uy [m]", tip[1]);
    let (_, el_full) = oracle(1.0);
    report.push_metric("elastica tip deflection at full load [m]", el_full);

    // Small-load verification at the first step carrying 10% of the load.
    if let Some(t) = result.tip.iter().find(|t| t.load_scale >= 0.1 - 1e-12) {
        let (eb, el) = oracle(t.load_scale);
        let deflection = -t.displacement[1];
        report.push_metric("elastica tip deflection at 10% load [m]", el);
        report.push_metric("relative difference to elastica at 10% load", (deflection - el).abs() / el);
        report.checks.push(Check::relative("tip deflection at 10% load vs Euler-Bernoulli", deflection, eb, 0.05));
    }
    if cfg.study.cell_sizes.len() >= 2 {
        let mut levels = Vec::new();
        for hq in &cfg.study.cell_sizes {
            let level = setup.with_cell_size(hq.si)?;
            let u = if (hq.si - setup.cell_size).abs() < 1e-12 * setup.cell_size {
                tip
            } else {
                simulate(&level)?.final_tip()
            };
            report.push_metric(format!("final tip uy at h = {:.6} m", hq.si), u[1]);
            levels.push((hq.si, u));
        }
        levels.sort_by(|a, b| b.0.total_cmp(&a.0));
        if let Some(p) = out.path("refinement.csv") {
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["cell_size", "ux", "uy"])?;
            for (h, u) in &levels {
                w.write_record([h, &u[0], &u[1]].map(|v| format!("{v:.10e}")))?;
            }
            w.flush()?;
        }
        let n = levels.len();
        let change = tip_change(levels[n - 2].1, levels[n - 1].1);
        report.checks.push(Check::at_most(
            format!("tip displacement change between h = {:.4} m and h = {:.4} m", levels[n - 2].0, levels[n - 1].0),
            change,
            0.01,
        ));
    }
    Ok(report)
}
