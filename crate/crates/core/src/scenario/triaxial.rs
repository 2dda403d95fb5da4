//! Drained triaxial compression of single material points.

use super::{tail_slope, Check, Outputs, RunReport, ScenarioError, StepSummary};
use crate::config::{ConfigError, MaterialConfig, NorSandPreset, ScenarioConfig};
use crate::constitutive::{stress_point_drive, DriveLog, HenckyPoint, Material, NorSandPoint, TriaxialPath};

/// Residuals at or below this relative level are treated as round-off when
/// judging the convergence order.
pub const SLOPE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct TriaxialCase {
    pub label: String,
    pub material: Material,
}

/// One case per preset, or the `[material]` block alone.
pub fn cases(cfg: &ScenarioConfig) -> Result<Vec<TriaxialCase>, ConfigError> {
    let tri = cfg.triaxial.as_ref().ok_or_else(|| ConfigError::Invalid("missing [triaxial]".into()))?;
    if tri.presets.is_empty() {
        let m = cfg
            .material
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("triaxial needs presets or a [material] block".into()))?;
        return Ok(vec![TriaxialCase { label: m.model.clone(), material: m.to_material()? }]);
    }
    tri.presets
        .iter()
        .map(|&preset| {
            let mut m = cfg
                .material
                .clone()
                .unwrap_or_else(|| MaterialConfig { model: "nor-sand".into(), ..Default::default() });
            if m.model != "nor-sand" {
                return Err(ConfigError::Invalid("triaxial presets apply to the nor-sand model".into()));
            }
            m.preset = Some(preset);
            let label = match preset {
                NorSandPreset::Loose => "loose",
                NorSandPreset::Dense => "dense",
            };
            Ok(TriaxialCase { label: label.into(), material: m.to_material()? })
        })
        .collect()
}

pub fn drive(material: &Material, path: &TriaxialPath) -> Result<DriveLog, ScenarioError> {
    let log = match material {
        Material::NorSand(p) => stress_point_drive(&mut NorSandPoint::new(*p), path)?,
        Material::Hencky(p) => stress_point_drive(&mut HenckyPoint::new(*p), path)?,
        other => {
            return Err(ConfigError::Invalid(format!(
                "triaxial driver supports nor-sand and hencky, not {}",
                other.name()
            ))
            .into())
        }
    };
    Ok(log)
}

/// Peak deviatoric stress and its increment index.
pub fn peak(log: &DriveLog) -> (f64, usize) {
    log.increments
        .iter()
        .enumerate()
        .fold((f64::MIN, 0), |(q, k), (i, inc)| if inc.q > q { (inc.q, i) } else { (q, k) })
}

/// Smallest convergence-order estimate over increments with a usable tail.
pub fn min_tail_slope(log: &DriveLog) -> Option<f64> {
    log.increments.iter().filter_map(|inc| tail_slope(&inc.residuals, SLOPE_FLOOR)).min_by(|a, b| a.total_cmp(b))
}

pub fn run(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<RunReport, ScenarioError> {
    let tri = cfg.triaxial.as_ref().expect("validated");
    let mut report = RunReport::new(cfg.scenario, cfg.name.clone());
    let path = TriaxialPath::compression(-tri.axial_strain, tri.increments);
    let mut peaks = Vec::new();
    for case in cases(cfg)? {
        let log = drive(&case.material, &path)?;
        if let Some(p) = out.path(&format!("triaxial_{}.csv", case.label)) {
            log.write_csv(&p)?;
        }
        let l = &case.label;
        report.steps += log.increments.len();
        report.iterations.extend(log.increments.iter().map(|inc| StepSummary {
            step: inc.step,
            load_scale: inc.axial_strain / path.axial_strain,
            iterations: inc.iterations,
            residuals: inc.residuals.clone(),
            roundoff_floor: 0.0,
        }));
        let (q_peak, k_peak) = peak(&log);
        let last = log.increments.last().expect("at least one increment");
        report.push_metric(format!("{l}: peak q [Pa]"), q_peak);
        report.push_metric(format!("{l}: final q [Pa]"), last.q);
        report.push_metric(format!("{l}: final volumetric strain"), last.vol_strain);
        report.checks.push(Check::at_most(format!("{l}: max Newton iterations"), log.max_iterations() as f64, 6.0));
        report.checks.push(Check::at_least(
            format!("{l}: convergence order of the Newton tail"),
            min_tail_slope(&log).unwrap_or(f64::NAN),
            1.8,
        ));
        if l == "loose" {
            let softening = if k_peak + 1 < log.increments.len() { (q_peak - last.q) / q_peak } else { 0.0 };
            report.checks.push(Check::at_least("loose: relative softening after the peak", softening, 0.01));
            // Compression is negative volumetric strain.
            let dilating = log.increments.windows(2).filter(|w| w[1].vol_strain > w[0].vol_strain).count();
            report.checks.push(Check::at_most("loose: dilating increments", dilating as f64, 0.0));
        }
        if l == "dense" {
            report.checks.push(Check::at_least("dense: final volumetric strain (dilation)", last.vol_strain, 0.0));
        }
        peaks.push((l.clone(), q_peak));
    }
    let find = |name: &str| peaks.iter().find(|(l, _)| l == name).map(|(_, q)| *q);
    if let (Some(loose), Some(dense)) = (find("loose"), find("dense")) {
        report.checks.push(Check::at_least("dense/loose peak q ratio", dense / loose, 1.0));
    }
    Ok(report)
}
