//! Sparse vs dense differentiation cost on cantilever refinements.

use super::cantilever::CantileverSetup;
use super::{loglog_slope, Check, Outputs, RunReport, ScenarioError};
use crate::config::{ConfigError, ScenarioConfig};
use crate::constitutive::{ElasticParams, Material};
use crate::jacobian::{write_bench_csv, BenchRow, JacobianStrategy};
use crate::mpm::{fill_box, DirichletRule, Grid, LoadSchedule, MpmModel, Side, SolverSettings, StepContext};
use crate::shape::{block_size, ShapeFunctionKind};

/// Sparse and dense Jacobians of one residual evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equivalence {
    pub dofs: usize,
    pub max_relative_difference: f64,
    pub sparse_passes: usize,
    pub dense_passes: usize,
    /// `Σ_f Π_a min(b, nodes spanned by the DOFs of field f along a)`.
    pub expected_passes: usize,
    pub sparse_seconds: f64,
    pub dense_seconds: f64,
}

/// Block-seeded pass count predicted from the extent of the free DOFs.
pub fn expected_passes(model: &MpmModel, ctx: &StepContext) -> usize {
    let b = block_size(model.kind);
    let dim = model.dim();
    let layout = &ctx.layout;
    (0..layout.fields)
        .map(|f| {
            let mut lo = [usize::MAX; 3];
            let mut hi = [0usize; 3];
            let mut any = false;
            for i in 0..layout.len() {
                let (node, field) = layout.node_of(i);
                if field != f {
                    continue;
                }
                any = true;
                let ijk = model.grid.node_ijk(node);
                for a in 0..dim {
                    lo[a] = lo[a].min(ijk[a]);
                    hi[a] = hi[a].max(ijk[a]);
                }
            }
            if !any {
                return 0;
            }
            (0..dim).map(|a| b.min(hi[a] - lo[a] + 1)).product::<usize>()
        })
        .sum()
}

/// Compares both strategies at increment `du` of the current step.
pub fn equivalence(model: &MpmModel, ctx: &StepContext, du: &[f64], scale: f64) -> Result<Equivalence, ScenarioError> {
    let (js, _, ss) = model.jacobian(ctx, du, scale, JacobianStrategy::Sparse)?;
    let (jd, _, sd) = model.jacobian(ctx, du, scale, JacobianStrategy::Dense)?;
    Ok(Equivalence {
        dofs: ctx.layout.len(),
        max_relative_difference: js.max_relative_difference(&jd),
        sparse_passes: ss.passes,
        dense_passes: sd.passes,
        expected_passes: expected_passes(model, ctx),
        sparse_seconds: ss.diff_seconds,
        dense_seconds: sd.diff_seconds,
    })
}

/// Equivalence at the converged increment of the first load step, so the
/// Jacobians are taken at a deformed state.
pub fn equivalence_after_first_step(model: &MpmModel, scale: f64) -> Result<Equivalence, ScenarioError> {
    let ctx = model.p2g()?;
    let (du, _) = model.newton(&ctx, 1, scale)?;
    equivalence(model, &ctx, &du, scale)
}

/// Neo-Hookean 5 × 5 × 5 block under gravity with its base fixed, two
/// particles per cell along each axis.
pub fn smoke_block_3d() -> Result<MpmModel, ScenarioError> {
    let grid = Grid::new(3, [-1.0; 3], [1.0; 3], [7, 7, 7])?;
    let mut particles = fill_box(3, [0.0; 3], [5.0; 3], [1.0; 3], 2, 1000.0, 0);
    for p in &mut particles {
        p.gravity = [0.0, 0.0, -9.81];
    }
    let rules = vec![DirichletRule::new(2, Side::Le, 0.0, &[0, 1, 2])];
    let material = Material::NeoHookean(ElasticParams::new(1e6, 0.3));
    Ok(MpmModel::new(grid, ShapeFunctionKind::Gimp, vec![material], particles, rules, SolverSettings::default())?)
}

/// Timings of one refinement level and strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTiming {
    pub cell_size: f64,
    pub strategy: JacobianStrategy,
    pub dofs: usize,
    pub jacobians: usize,
    pub total_s: f64,
    pub diff_s: f64,
}

impl LevelTiming {
    pub fn per_jacobian(&self) -> f64 {
        self.diff_s / self.jacobians.max(1) as f64
    }
}

/// Runs the first `steps` load steps of `setup` with `strategy`.
pub fn time_level(
    setup: &CantileverSetup,
    strategy: JacobianStrategy,
    steps: usize,
) -> Result<LevelTiming, ScenarioError> {
    let mut setup = setup.clone();
    setup.settings.strategy = strategy;
    let (mut model, _) = setup.build()?;
    let full = LoadSchedule::linear(setup.steps);
    let schedule = LoadSchedule { scales: full.scales[..steps.min(full.steps())].to_vec() };
    let start = std::time::Instant::now();
    let reports = model.run(&schedule, |_, _| Ok(()))?;
    Ok(LevelTiming {
        cell_size: setup.cell_size,
        strategy,
        dofs: reports.iter().map(|r| r.dofs).max().unwrap_or(0),
        jacobians: reports.iter().map(|r| r.iterations).sum(),
        total_s: start.elapsed().as_secs_f64(),
        diff_s: reports.iter().map(|r| r.jacobian.diff_seconds).sum(),
    })
}

pub fn run(
    cfg: &ScenarioConfig,
    only: Option<JacobianStrategy>,
    out: &mut Outputs,
) -> Result<RunReport, ScenarioError> {
    let base = CantileverSetup::from_config(cfg)?;
    let mut report = RunReport::new(cfg.scenario, cfg.name.clone());
    let steps = cfg.study.steps_per_level.unwrap_or(base.steps);
    if steps == 0 {
        return Err(ConfigError::Invalid("study.steps_per_level must be positive".into()).into());
    }
    let strategies: Vec<JacobianStrategy> = match only {
        Some(s) => vec![s],
        None => vec![JacobianStrategy::Sparse, JacobianStrategy::Dense],
    };
    let mut timings = Vec::new();
    let mut detail = Vec::new();
    for hq in &cfg.study.cell_sizes {
        let setup = base.with_cell_size(hq.si)?;
        let h = setup.cell_size;
        let (model, _) = setup.build()?;
        let eq = equivalence_after_first_step(&model, 1.0 / setup.steps as f64)?;
        report.checks.push(Check::at_most(
            format!("h = {h:.4}: sparse vs dense max relative difference"),
            eq.max_relative_difference,
            1e-12,
        ));
        report.checks.push(Check::relative(
            format!("h = {h:.4}: sparse passes per Jacobian"),
            eq.sparse_passes as f64,
            eq.expected_passes as f64,
            0.0,
        ));
        report.push_metric(format!("h = {h:.4}: DOFs"), eq.dofs as f64);
        for &s in &strategies {
            let t = time_level(&setup, s, steps)?;
            report.steps += t.jacobians;
            timings.push(t);
        }
        detail.push(eq);
    }
    let rows: Vec<BenchRow> = timings
        .iter()
        .map(|t| BenchRow {
            grid_size: t.cell_size,
            strategy: t.strategy.name().into(),
            total_s: t.total_s,
            diff_s: t.diff_s,
            diff_share: if t.total_s > 0.0 { t.diff_s / t.total_s } else { 0.0 },
        })
        .collect();
    if let Some(p) = out.path("bench.csv") {
        write_bench_csv(&p, &rows)?;
    }
    if let Some(p) = out.path("bench_levels.csv") {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["grid_size", "dofs", "sparse_passes", "dense_passes", "max_relative_difference"])?;
        for (hq, eq) in cfg.study.cell_sizes.iter().zip(&detail) {
            w.write_record(&[
                format!("{:.10e}", hq.si),
                eq.dofs.to_string(),
                eq.sparse_passes.to_string(),
                eq.dense_passes.to_string(),
                format!("{:.10e}", eq.max_relative_difference),
            ])?;
        }
        w.flush()?;
    }
    report.timing.total_s = timings.iter().map(|t| t.total_s).sum();
    report.timing.diff_s = timings.iter().map(|t| t.diff_s).sum();

    let of = |s: JacobianStrategy| timings.iter().filter(move |t| t.strategy == s);
    for t in &timings {
        report.push_metric(format!("h = {:.4}: {} s per Jacobian", t.cell_size, t.strategy.name()), t.per_jacobian());
    }
    let sparse: Vec<f64> = of(JacobianStrategy::Sparse).map(LevelTiming::per_jacobian).collect();
    if sparse.len() >= 2 {
        let max = sparse.iter().copied().fold(f64::MIN, f64::max);
        let min = sparse.iter().copied().fold(f64::MAX, f64::min);
        report.checks.push(Check::at_most("sparse per-Jacobian time spread (max/min)", max / min, 3.0));
    }
    let dense: Vec<&LevelTiming> = of(JacobianStrategy::Dense).collect();
    if dense.len() >= 2 {
        let dofs: Vec<f64> = dense.iter().map(|t| t.dofs as f64).collect();
        let secs: Vec<f64> = dense.iter().map(|t| t.per_jacobian()).collect();
        // Strictly above linear growth.
        let slope = loglog_slope(&dofs, &secs);
        report.checks.push(Check::at_least("dense time vs DOFs log-log slope (> 1)", slope, 1.0 + 1e-9));
    }
    if let (Some(s), Some(d)) = (of(JacobianStrategy::Sparse).next_back(), of(JacobianStrategy::Dense).next_back()) {
        report.checks.push(Check::at_least(
            "finest level dense/sparse differentiation time",
            d.per_jacobian() / s.per_jacobian(),
            4.0,
        ));
    }
    Ok(report)
}
