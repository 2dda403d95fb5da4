//! Constitutive models: Hencky elasticity, Hencky elasticity with J2
//! plasticity, Neo-Hookean hyperelasticity, linear elasticity and the
//! Nor-Sand critical-state model, plus a mixed-control stress-point driver.
//!
//! Stresses follow the continuum-mechanics convention: tension positive,
//! compression negative. All models are generic over [`Scalar`] so the same
//! code evaluates plain values and records tapes.

mod driver;
mod elastic;
mod norsand;

pub use driver::{stress_point_drive, DriveIncrement, DriveLog, HenckyPoint, NorSandPoint, PointModel, TriaxialPath};
pub use elastic::{hencky_stress, j2_return_map, linear_stress, neo_hookean_stress, J2Result};
pub use norsand::{norsand_initial_state, norsand_update, norsand_yield, NorSandResult, NorSandState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{AdError, Scalar};
use crate::tensor::{self, Mat3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstitutiveError {
    #[error("non-positive det F ({0})")]
    NonPositiveJacobian(f64),
    #[error("invalid material parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "return mapping did not converge in {iterations} iterations (residual {residual:.3e}, p = {p:.6e}, q = {q:.6e})"
    )]
    ReturnMapping { iterations: usize, residual: f64, p: f64, q: f64 },
    #[error("stress-point Newton did not converge at increment {increment} after {iterations} iterations (relative residual {residual:.3e})")]
    Driver { increment: usize, iterations: usize, residual: f64 },
    #[error(transparent)]
    Ad(#[from] AdError),
}

impl ConstitutiveError {
    pub fn is_nonconvergence(&self) -> bool {
        matches!(self, ConstitutiveError::ReturnMapping { .. } | ConstitutiveError::Driver { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl ElasticParams {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64) -> Self {
        Self { youngs_modulus, poisson_ratio }
    }

    pub fn from_lame(lambda: f64, mu: f64) -> Self {
        Self {
            youngs_modulus: mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu),
            poisson_ratio: lambda / (2.0 * (lambda + mu)),
        }
    }

    pub fn lambda(&self) -> f64 {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    }

    pub fn mu(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        if !(self.youngs_modulus > 0.0) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "Young's modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "Poisson's ratio must lie in (-1, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct J2Params {
    pub elastic: ElasticParams,
    pub kappa: f64,
}

impl J2Params {
    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        self.elastic.validate()?;
        if !(self.kappa > 0.0) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "yield strength must be positive, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Nor-Sand parameters. Pressures are in Pa and negative in compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorSandParams {
    pub m: f64,
    pub n: f64,
    pub h_mod: f64,
    pub lambda_tilde: f64,
    pub v_c0: f64,
    pub v0: f64,
    pub p_i0: f64,
    pub k0: f64,
    pub p0: f64,
    /// Ratio of elastic shear to bulk stiffness.
    #[serde(default = "default_shear_ratio")]
    pub shear_ratio: f64,
    /// Image-state coupling constant in `p_i* = p exp(-chi psi / M)`.
    #[serde(default = "default_chi")]
    pub chi: f64,
}

fn default_shear_ratio() -> f64 {
    0.75
}

fn default_chi() -> f64 {
    3.5
}

impl NorSandParams {
    pub fn loose_brasted() -> Self {
        Self {
            m: 1.27,
            n: 0.4,
            h_mod: 70.0,
            lambda_tilde: 0.02,
            v_c0: 1.8911,
            v0: 1.75,
            p_i0: -332.30e3,
            k0: 0.45,
            p0: -390e3,
            shear_ratio: default_shear_ratio(),
            chi: default_chi(),
        }
    }

    pub fn dense_brasted() -> Self {
        Self { h_mod: 120.0, v0: 1.57, p_i0: -534.47e3, k0: 0.38, p0: -425e3, ..Self::loose_brasted() }
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |msg: &str| Err(ConstitutiveError::InvalidParameter(msg.to_string()));
        if !(self.m > 0.0) {
            return bad("M must be positive");
        }
        if !(self.n >= 0.0 && self.n < 1.0) {
            return bad("N must lie in [0, 1)");
        }
        if !(self.h_mod > 0.0) {
            return bad("hardening modulus must be positive");
        }
        if !(self.lambda_tilde > 0.0) {
            return bad("lambda_tilde must be positive");
        }
        if !(self.p_i0 < 0.0 && self.p0 < 0.0) {
            return bad("initial pressures must be negative (compression)");
        }
        if !(self.k0 > 0.0 && self.v0 > 0.0 && self.v_c0 > 0.0 && self.shear_ratio > 0.0) {
            return bad("K0, v0, v_c0 and shear_ratio must be positive");
        }
        Ok(())
    }
}

/// Material model selection for particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Material {
    Hencky(ElasticParams),
    HenckyJ2(J2Params),
    NeoHookean(ElasticParams),
    LinearElastic(ElasticParams),
    NorSand(NorSandParams),
}

impl Material {
    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        match self {
            Material::Hencky(p) | Material::NeoHookean(p) | Material::LinearElastic(p) => p.validate(),
            Material::HenckyJ2(p) => p.validate(),
            Material::NorSand(p) => p.validate(),
        }
    }

    pub fn initial_history(&self) -> History {
        match self {
            Material::HenckyJ2(_) => History::ElasticLeftCauchyGreen(tensor::identity()),
            Material::NorSand(p) => History::NorSand(norsand_initial_state(p)),
            _ => History::None,
        }
    }

    /// Representative tangent modulus at stress `sigma`, used to bound the
    /// round-off in stresses computed from `F = I + ∇u`.
    pub fn modulus_scale(&self, sigma: &Mat3<f64>) -> f64 {
        match self {
            Material::Hencky(p) | Material::NeoHookean(p) | Material::LinearElastic(p) => p.lambda() + 2.0 * p.mu(),
            Material::HenckyJ2(p) => p.elastic.lambda() + 2.0 * p.elastic.mu(),
            Material::NorSand(p) => {
                let pm = (sigma[0][0] + sigma[1][1] + sigma[2][2]).abs() / 3.0;
                let pm = pm.max(p.p0.abs());
                pm / p.lambda_tilde * (1.0 + 4.0 / 3.0 * p.shear_ratio)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Material::Hencky(_) => "hencky",
            Material::HenckyJ2(_) => "hencky-j2",
            Material::NeoHookean(_) => "neo-hookean",
            Material::LinearElastic(_) => "linear-elastic",
            Material::NorSand(_) => "nor-sand",
        }
    }
}

/// Per-particle history variables.
#[derive(Debug, Clone, PartialEq)]
pub enum History {
    None,
    ElasticLeftCauchyGreen(Mat3<f64>),
    NorSand(NorSandState),
}

/// Result of one constitutive evaluation inside a step.
#[derive(Debug, Clone)]
pub struct StressUpdate<S> {
    /// Cauchy stress at the trial deformation.
    pub sigma: Mat3<S>,
    /// History to commit if the step is accepted.
    pub history: History,
    /// Plastic multiplier increment (zero for elastic response).
    pub plastic_increment: f64,
}

/// Evaluates a material for the incremental deformation `f_delta` applied
/// on top of the committed deformation gradient `f_n` and history.
pub fn stress_update<S: Scalar>(
    material: &Material,
    history: &History,
    f_n: &Mat3<S>,
    f_delta: &Mat3<S>,
) -> Result<StressUpdate<S>, ConstitutiveError> {
    let f = tensor::mul(f_delta, f_n);
    let elastic = |sigma| StressUpdate { sigma, history: History::None, plastic_increment: 0.0 };
    match material {
        Material::Hencky(p) => Ok(elastic(hencky_stress(&f, p)?)),
        Material::NeoHookean(p) => Ok(elastic(neo_hookean_stress(&f, p)?)),
        Material::LinearElastic(p) => Ok(elastic(linear_stress(&f, p))),
        Material::HenckyJ2(p) => {
            let be_n = match history {
                History::ElasticLeftCauchyGreen(b) => *b,
                _ => tensor::identity(),
            };
            let j = tensor::det(&f);
            if !(j.value() > 0.0) {
                return Err(ConstitutiveError::NonPositiveJacobian(j.value()));
            }
            let be_trial = tensor::mul_bt(&tensor::mul(f_delta, &tensor::lift(&be_n)), f_delta);
            let r = j2_return_map(&be_trial, j, p);
            let be = tensor::sym_fn(&r.elastic_strain, |x| (2.0 * x).exp());
            Ok(StressUpdate {
                sigma: r.sigma,
                history: History::ElasticLeftCauchyGreen(be),
                plastic_increment: r.plastic_increment,
            })
        }
        Material::NorSand(p) => {
            let state = match history {
                History::NorSand(s) => s.clone(),
                _ => norsand_initial_state(p),
            };
            let deps = tensor::add_diag(&tensor::sym(f_delta), -S::one());
            let r = norsand_update(&deps, &state, p)?;
            Ok(StressUpdate {
                sigma: r.sigma,
                history: History::NorSand(r.state),
                plastic_increment: r.plastic_increment,
            })
        }
    }
}

#[cfg(test)]
mod tests;
