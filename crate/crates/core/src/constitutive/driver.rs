//! Mixed-control stress-point driver for drained triaxial paths: axial strain
//! prescribed, both lateral stresses held fixed.

use std::path::Path;

use super::norsand::{invariants, norsand_initial_state, norsand_stress, NorSandState};
use super::{hencky_stress, norsand_update, ConstitutiveError, ElasticParams, NorSandParams};
use crate::ad::{record, Scalar};
use crate::tensor::{self, Mat3};

/// A material point that can be driven by small-strain increments.
pub trait PointModel {
    /// Stress after applying `deps` to the committed state.
    fn evaluate<S: Scalar>(&self, deps: &Mat3<S>) -> Result<Mat3<S>, ConstitutiveError>;
    /// Accepts `deps` as the new committed state.
    fn commit(&mut self, deps: &Mat3<f64>) -> Result<(), ConstitutiveError>;
    /// Committed stress.
    fn stress(&self) -> Mat3<f64>;
}

/// Hencky elasticity driven through `F = I + ε` with diagonal `ε`.
#[derive(Debug, Clone)]
pub struct HenckyPoint {
    pub params: ElasticParams,
    pub strain: Mat3<f64>,
}

impl HenckyPoint {
    pub fn new(params: ElasticParams) -> Self {
        Self { params, strain: tensor::zeros() }
    }
}

impl PointModel for HenckyPoint {
    fn evaluate<S: Scalar>(&self, deps: &Mat3<S>) -> Result<Mat3<S>, ConstitutiveError> {
        let f = tensor::add_diag(&tensor::add(&tensor::lift(&self.strain), deps), S::one());
        hencky_stress(&f, &self.params)
    }

    fn commit(&mut self, deps: &Mat3<f64>) -> Result<(), ConstitutiveError> {
        self.strain = tensor::add(&self.strain, deps);
        Ok(())
    }

    fn stress(&self) -> Mat3<f64> {
        let f = tensor::add_diag(&self.strain, 1.0);
        hencky_stress(&f, &self.params).unwrap_or_else(|_| tensor::zeros())
    }
}

#[derive(Debug, Clone)]
pub struct NorSandPoint {
    pub params: NorSandParams,
    pub state: NorSandState,
}

impl NorSandPoint {
    pub fn new(params: NorSandParams) -> Self {
        Self { state: norsand_initial_state(&params), params }
    }
}

impl PointModel for NorSandPoint {
    fn evaluate<S: Scalar>(&self, deps: &Mat3<S>) -> Result<Mat3<S>, ConstitutiveError> {
        Ok(norsand_update(deps, &self.state, &self.params)?.sigma)
    }

    fn commit(&mut self, deps: &Mat3<f64>) -> Result<(), ConstitutiveError> {
        self.state = norsand_update(deps, &self.state, &self.params)?.state;
        Ok(())
    }

    fn stress(&self) -> Mat3<f64> {
        norsand_stress(&self.state, &self.params)
    }
}

/// Drained triaxial path: axis 0 is axial.
#[derive(Debug, Clone, Copy)]
pub struct TriaxialPath {
    /// Final axial strain (negative in compression).
    pub axial_strain: f64,
    pub increments: usize,
    /// Lateral stress to hold; `None` keeps the initial lateral stress.
    pub lateral_stress: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
}

impl TriaxialPath {
    pub fn compression(axial_strain: f64, increments: usize) -> Self {
        Self { axial_strain, increments, lateral_stress: None, tol: 1e-10, max_iters: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct DriveIncrement {
    pub step: usize,
    pub axial_strain: f64,
    pub lateral_strain: f64,
    pub vol_strain: f64,
    pub p: f64,
    pub q: f64,
    pub iterations: usize,
    /// Relative residual norms, starting at 1 for the initial guess.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct DriveLog {
    pub increments: Vec<DriveIncrement>,
}

impl DriveLog {
    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "axial_strain", "vol_strain", "p", "q", "iterations"])?;
        for inc in &self.increments {
            w.write_record(&[
                inc.step.to_string(),
                format!("{:.10e}", inc.axial_strain),
                format!("{:.10e}", inc.vol_strain),
                format!("{:.10e}", inc.p),
                format!("{:.10e}", inc.q),
                inc.iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_iterations(&self) -> usize {
        self.increments.iter().map(|i| i.iterations).max().unwrap_or(0)
    }
}

fn increment(daxial: f64, z: [f64; 2]) -> Mat3<f64> {
    let mut d = tensor::zeros::<f64>();
    d[0][0] = daxial;
    d[1][1] = z[0];
    d[2][2] = z[1];
    d
}

/// Drives `model` along `path`, solving the lateral strains at each
/// increment by Newton iteration with a taped consistent tangent.
pub fn stress_point_drive<M: PointModel>(model: &mut M, path: &TriaxialPath) -> Result<DriveLog, ConstitutiveError> {
    let s0 = model.stress();
    let lateral = path.lateral_stress.unwrap_or(0.5 * (s0[1][1] + s0[2][2]));
    let daxial = path.axial_strain / path.increments as f64;
    let mut log = DriveLog::default();
    let mut total = tensor::zeros::<f64>();
    for step in 1..=path.increments {
        let mut z = [0.0; 2];
        let mut residuals = Vec::new();
        let mut r0 = None;
        let mut iterations = 0;
        loop {
            let (tape, r) = record::<ConstitutiveError, _>(&z, |v| {
                let mut d = tensor::zeros();
                d[0][0] = crate::ad::Var::constant(daxial);
                d[1][1] = v[0];
                d[2][2] = v[1];
                let s = model.evaluate(&d)?;
                Ok(vec![s[1][1] - lateral, s[2][2] - lateral])
            })?;
            let norm = (r[0] * r[0] + r[1] * r[1]).sqrt();
            let scale = *r0.get_or_insert(norm);
            let stress_floor = 64.0 * f64::EPSILON * tensor::frob_norm(&model.stress()).max(lateral.abs());
            residuals.push(if scale > 0.0 { norm / scale } else { 0.0 });
            if norm <= path.tol * scale || norm <= stress_floor {
                break;
            }
            if iterations >= path.max_iters {
                return Err(ConstitutiveError::Driver { increment: step, iterations, residual: norm / scale });
            }
            let g0 = tape.backward(&[1.0, 0.0])?;
            let g1 = tape.backward(&[0.0, 1.0])?;
            let det = g0[0] * g1[1] - g0[1] * g1[0];
            if det == 0.0 || !det.is_finite() {
                return Err(ConstitutiveError::Driver { increment: step, iterations, residual: norm / scale });
            }
            z[0] -= (g1[1] * r[0] - g0[1] * r[1]) / det;
            z[1] -= (-g1[0] * r[0] + g0[0] * r[1]) / det;
            iterations += 1;
        }
        let d = increment(daxial, z);
        model.commit(&d)?;
        total = tensor::add(&total, &d);
        let (p, q) = invariants(&model.stress());
        log.increments.push(DriveIncrement {
            step,
            axial_strain: total[0][0],
            lateral_strain: total[1][1],
            vol_strain: tensor::trace(&total),
            p,
            q,
            iterations,
            residuals,
        });
    }
    Ok(log)
}
