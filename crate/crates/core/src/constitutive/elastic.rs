use super::{ConstitutiveError, ElasticParams, J2Params};
use crate::ad::Scalar;
use crate::tensor::{self, Mat3};

fn check_det<S: Scalar>(f: &Mat3<S>) -> Result<S, ConstitutiveError> {
    let j = tensor::det(f);
    if j.value() > 0.0 {
        Ok(j)
    } else {
        Err(ConstitutiveError::NonPositiveJacobian(j.value()))
    }
}

fn kirchhoff_from_strain<S: Scalar>(eps: &Mat3<S>, lambda: f64, mu: f64) -> Mat3<S> {
    let tr = tensor::trace(eps);
    tensor::add_diag(&tensor::scale(eps, S::cst(2.0 * mu)), tr * lambda)
}

/// Hencky elasticity: `τ = λ tr(ε) I + 2μ ε` with `ε = ½ ln(F Fᵀ)`;
/// returns the Cauchy stress `τ / J`.
pub fn hencky_stress<S: Scalar>(f: &Mat3<S>, p: &ElasticParams) -> Result<Mat3<S>, ConstitutiveError> {
    let j = check_det(f)?;
    let b = tensor::mul_bt(f, f);
    let eps = tensor::scale(&tensor::log_spd(&b), S::cst(0.5));
    let tau = kirchhoff_from_strain(&eps, p.lambda(), p.mu());
    Ok(tensor::scale(&tau, S::one() / j))
}

/// Compressible Neo-Hookean: `τ = μ(F Fᵀ − I) + λ ln(J) I`.
pub fn neo_hookean_stress<S: Scalar>(f: &Mat3<S>, p: &ElasticParams) -> Result<Mat3<S>, ConstitutiveError> {
    let j = check_det(f)?;
    let b = tensor::mul_bt(f, f);
    let tau = tensor::add_diag(&tensor::scale(&tensor::add_diag(&b, -S::one()), S::cst(p.mu())), j.ln() * p.lambda());
    Ok(tensor::scale(&tau, S::one() / j))
}

/// Small-strain linear elasticity with `ε = sym(F) − I`.
pub fn linear_stress<S: Scalar>(f: &Mat3<S>, p: &ElasticParams) -> Mat3<S> {
    let eps = tensor::add_diag(&tensor::sym(f), -S::one());
    kirchhoff_from_strain(&eps, p.lambda(), p.mu())
}

#[derive(Debug, Clone)]
pub struct J2Result<S> {
    pub sigma: Mat3<S>,
    /// Committed elastic Hencky strain (values only).
    pub elastic_strain: Mat3<f64>,
    pub plastic_increment: f64,
}

/// Radial return for von Mises plasticity on Hencky elastic strain.
///
/// `be_trial` is the trial elastic left Cauchy–Green tensor and `j` the
/// total volume ratio used to convert Kirchhoff to Cauchy stress.
pub fn j2_return_map<S: Scalar>(be_trial: &Mat3<S>, j: S, p: &J2Params) -> J2Result<S> {
    let (lambda, mu) = (p.elastic.lambda(), p.elastic.mu());
    let eps_tr = tensor::scale(&tensor::log_spd(be_trial), S::cst(0.5));
    let tau_tr = kirchhoff_from_strain(&eps_tr, lambda, mu);
    let s_tr = tensor::deviator(&tau_tr);
    let norm_v = tensor::frob_norm(&tensor::values(&s_tr));
    if norm_v <= p.kappa {
        return J2Result {
            sigma: tensor::scale(&tau_tr, S::one() / j),
            elastic_strain: tensor::values(&eps_tr),
            plastic_increment: 0.0,
        };
    }
    let norm = tensor::ddot(&s_tr, &s_tr).sqrt();
    let factor = S::cst(p.kappa) / norm;
    let s = tensor::scale(&s_tr, factor);
    let pressure_part = tensor::trace(&tau_tr) / 3.0;
    let tau = tensor::add_diag(&s, pressure_part);
    let eps_vol = tensor::trace(&eps_tr) / 3.0;
    let eps = tensor::add_diag(&tensor::scale(&s, S::cst(1.0 / (2.0 * mu))), eps_vol);
    J2Result {
        sigma: tensor::scale(&tau, S::one() / j),
        elastic_strain: tensor::values(&eps),
        plastic_increment: (norm_v - p.kappa) / (2.0 * mu),
    }
}
