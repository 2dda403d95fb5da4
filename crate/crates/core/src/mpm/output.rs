use std::path::Path;

use serde::Serialize;

use super::{MpmError, Particle, StepReport};

#[derive(Debug, Serialize)]
struct ParticleRow {
    step: usize,
    id: usize,
    x: f64,
    y: f64,
    z: f64,
    sxx: f64,
    syy: f64,
    szz: f64,
    sxy: f64,
    syz: f64,
    sxz: f64,
    f11: f64,
    f12: f64,
    f13: f64,
    f21: f64,
    f22: f64,
    f23: f64,
    f31: f64,
    f32: f64,
    f33: f64,
    volume: f64,
}

/// Appends one row per particle; the header is written with the first row.
pub fn write_particles_csv<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    step: usize,
    particles: &[Particle],
) -> Result<(), MpmError> {
    for (id, p) in particles.iter().enumerate() {
        let s = &p.sigma;
        let f = &p.f;
        w.serialize(ParticleRow {
            step,
            id,
            x: p.x[0],
            y: p.x[1],
            z: p.x[2],
            sxx: s[0][0],
            syy: s[1][1],
            szz: s[2][2],
            sxy: s[0][1],
            syz: s[1][2],
            sxz: s[0][2],
            f11: f[0][0],
            f12: f[0][1],
            f13: f[0][2],
            f21: f[1][0],
            f22: f[1][1],
            f23: f[1][2],
            f31: f[2][0],
            f32: f[2][1],
            f33: f[2][2],
            volume: p.volume,
        })?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IterationRecord {
    pub step: usize,
    pub iteration: usize,
    pub relative_residual: f64,
}

/// Iteration log with columns `step, iteration, relative_residual`.
pub fn write_iteration_log(path: &Path, reports: &[StepReport]) -> Result<(), MpmError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for (k, &rel) in r.residuals.iter().enumerate() {
            w.serialize(IterationRecord { step: r.step, iteration: k, relative_residual: rel })?;
        }
    }
    w.flush()?;
    Ok(())
}
