//! One-dimensional consolidation against the Terzaghi series.

use super::{cell_count, Check, Outputs, RunReport, ScenarioError};
use crate::config::{ConfigError, ScenarioConfig};
use crate::constitutive::Material;
use crate::jacobian::JacobianStrategy;
use crate::porous::{consolidation_run, write_profiles_csv, write_settlement_csv, ConsolidationSetup};

pub fn setup_from_config(cfg: &ScenarioConfig) -> Result<ConsolidationSetup, ConfigError> {
    let por = cfg.porous.as_ref().expect("validated");
    let size = &cfg.geometry.size;
    if size.is_empty() || size.len() > 3 {
        return Err(ConfigError::Invalid("consolidation needs geometry.size = [height] (1 to 3 entries)".into()));
    }
    let height = size[0].si;
    let h = cfg
        .geometry
        .cell_size
        .map(|q| q.si)
        .ok_or_else(|| ConfigError::Invalid("missing geometry.cell_size".into()))?;
    let elastic = match cfg.material.as_ref().expect("validated").to_material()? {
        Material::LinearElastic(p) | Material::Hencky(p) | Material::NeoHookean(p) => p,
        other => {
            return Err(ConfigError::Invalid(format!("consolidation needs an elastic skeleton, got {}", other.name())))
        }
    };
    let oedometric = elastic.lambda() + 2.0 * elastic.mu();
    let k = por.permeability.si;
    let viscosity = match (por.viscosity, por.consolidation_coefficient) {
        (Some(v), _) => v.si,
        (None, Some(cv)) => k * oedometric / cv.si,
        (None, None) => unreachable!("validated"),
    };
    let defaults = ConsolidationSetup::terzaghi_default();
    Ok(ConsolidationSetup {
        dim: size.len(),
        height,
        cells: cell_count(height, h)?,
        particles_per_cell: cfg.geometry.particles_per_cell.unwrap_or(2),
        elastic,
        permeability: k,
        viscosity,
        fluid_density: por.fluid_density.map(|q| q.si).unwrap_or(1000.0),
        load: cfg
            .loading
            .pressure
            .map(|q| q.si)
            .ok_or_else(|| ConfigError::Invalid("consolidation needs loading.pressure".into()))?,
        dt: cfg
            .schedule
            .dt
            .map(|q| q.si)
            .ok_or_else(|| ConfigError::Invalid("consolidation needs schedule.dt".into()))?,
        report_tv: if por.report_tv.is_empty() { defaults.report_tv } else { por.report_tv.clone() },
        dt_growth: por.dt_growth.unwrap_or(defaults.dt_growth),
        final_tv: por.final_tv.unwrap_or(defaults.final_tv),
        strategy: cfg.solver.jacobian,
    })
}

/// Largest entrywise relative difference between the sparse and dense
/// coupled Jacobians at the initial state, with the sparse pass count.
pub fn jacobian_equivalence(setup: &ConsolidationSetup) -> Result<(f64, usize, usize), ScenarioError> {
    let model = setup.build()?;
    let x = vec![0.0; model.ctx.layout.len()];
    let (js, ss) = model.jacobian(&x, setup.dt, 1.0, JacobianStrategy::Sparse)?;
    let (jd, sd) = model.jacobian(&x, setup.dt, 1.0, JacobianStrategy::Dense)?;
    Ok((js.max_relative_difference(&jd), ss.passes, sd.passes))
}

pub fn run(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<RunReport, ScenarioError> {
    let setup = setup_from_config(cfg)?;
    let mut report = RunReport::new(cfg.scenario, cfg.name.clone());
    let result = consolidation_run(&setup)?;
    if let Some(p) = out.path("profiles.csv") {
        write_profiles_csv(&p, &result.profiles)?;
    }
    if let Some(p) = out.path("settlement.csv") {
        write_settlement_csv(&p, &result.settlement)?;
    }
    if let Some(p) = out.path("terzaghi_comparison.csv") {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["target_tv", "tv", "relative_l2"])?;
        for pr in &result.profiles {
            w.write_record([pr.target_tv, pr.tv, pr.relative_l2].map(|v| format!("{v:.10e}")))?;
        }
        w.flush()?;
    }
    report.steps = result.steps;
    report.timing.diff_s = result.jacobian.diff_seconds;
    report.push_metric("consolidation coefficient [m^2/s]", setup.params().consolidation_coefficient());
    report.push_metric("largest converged relative residual", result.max_residual);
    for pr in &result.profiles {
        report.push_metric(format!("time factor reached for T_v = {}", pr.target_tv), pr.tv);
        report.checks.push(Check::at_most(
            format!("pore pressure relative L2 error at T_v = {}", pr.target_tv),
            pr.relative_l2,
            0.02,
        ));
    }
    report.checks.push(Check::relative(
        "final settlement vs tH/(lambda + 2 mu)",
        result.final_settlement,
        result.expected_settlement,
        0.01,
    ));
    // Largest step-to-step rise of the peak pore pressure, relative to the load.
    let rise = result.max_pressure_history.windows(2).map(|w| (w[1] - w[0]) / setup.load).fold(0.0, f64::max);
    report.push_metric("peak pore pressure at the first step / load", result.max_pressure_history[0] / setup.load);
    report.checks.push(Check::at_most("largest rise of the peak pore pressure / load", rise, 0.0));
    let (diff, sparse_passes, dense_passes) = jacobian_equivalence(&setup)?;
    report.push_metric("sparse passes per Jacobian", sparse_passes as f64);
    report.push_metric("dense passes per Jacobian", dense_passes as f64);
    report.checks.push(Check::at_most("coupled Jacobian sparse vs dense max relative difference", diff, 1e-12));
    Ok(report)
}
