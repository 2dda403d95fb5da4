//! Nor-Sand at small strain with pressure-dependent hyperelasticity.
//!
//! Elasticity: `p = p_ref exp(−ε_v / λ̃)` on the elastic volumetric strain
//! and `q = 3 G ε_s` with shear modulus `G = a |p|`, `a = shear_ratio / λ̃`,
//! so the shear-to-bulk stiffness ratio is constant.
//!
//! The return map solves for the elastic volumetric strain, the plastic
//! multiplier and the image pressure with a local Newton loop whose
//! Jacobian comes from a nested tape. When recording, one final Newton
//! correction with a frozen Jacobian is taped, which carries the exact
//! implicit-function tangent of the converged solution.

use super::{ConstitutiveError, NorSandParams};
use crate::ad::{record, AdError, Scalar, Var};
use crate::tensor::{self, Mat3};

const LOCAL_TOL: f64 = 1e-12;
const LOCAL_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct NorSandState {
    pub elastic_strain: Mat3<f64>,
    pub p_i: f64,
    /// Total volumetric strain since the initial state.
    pub vol_strain: f64,
    /// Reference pressure of the elastic law.
    pub p_ref: f64,
    /// Accumulated deviatoric plastic strain.
    pub plastic_shear: f64,
}

#[derive(Debug, Clone)]
pub struct NorSandResult<S> {
    pub sigma: Mat3<S>,
    pub state: NorSandState,
    pub plastic_increment: f64,
    pub local_iterations: usize,
}

/// Stress ratio at the yield surface for pressure `p` and image pressure `p_i`.
pub fn stress_ratio<S: Scalar>(p: S, p_i: S, prm: &NorSandParams) -> S {
    if prm.n > 0.0 {
        let e = prm.n / (1.0 - prm.n);
        (S::one() - (p / p_i).powf(e) * (1.0 - prm.n)) * (prm.m / prm.n)
    } else {
        (S::one() + (p_i / p).ln()) * prm.m
    }
}

/// Yield function `f = q + η p` of a stress tensor.
pub fn norsand_yield(sigma: &Mat3<f64>, p_i: f64, prm: &NorSandParams) -> f64 {
    let (p, q) = invariants(sigma);
    q + stress_ratio(p, p_i, prm) * p
}

/// Mean stress and von Mises equivalent stress.
pub fn invariants(sigma: &Mat3<f64>) -> (f64, f64) {
    let p = tensor::trace(sigma) / 3.0;
    let s = tensor::deviator(sigma);
    (p, (1.5 * tensor::ddot(&s, &s)).sqrt())
}

/// Returns `(p, a)`.
fn elastic_p<S: Scalar>(eps_v: S, p_ref: f64, prm: &NorSandParams) -> (S, f64) {
    let lt = prm.lambda_tilde;
    ((eps_v * (-1.0 / lt)).exp() * p_ref, prm.shear_ratio / lt)
}

/// Stress tensor from elastic strain.
fn elastic_stress<S: Scalar>(eps_e: &Mat3<S>, p_ref: f64, prm: &NorSandParams) -> Mat3<S> {
    let (p, a) = elastic_p(tensor::trace(eps_e), p_ref, prm);
    let e = tensor::deviator(eps_e);
    tensor::add_diag(&tensor::scale(&e, p * (-2.0 * a)), p)
}

/// Initial state reproducing the in-situ stress given by `p0` and `K0`,
/// with axis 0 vertical.
pub fn norsand_initial_state(prm: &NorSandParams) -> NorSandState {
    let sv = 3.0 * prm.p0 / (1.0 + 2.0 * prm.k0);
    let sh = prm.k0 * sv;
    let q0 = (sh - sv).abs();
    let a = prm.shear_ratio / prm.lambda_tilde;
    let eps_s = q0 / (3.0 * a * prm.p0.abs());
    // Vertical stress is the more compressive one when K0 < 1.
    let sign = if sv < sh { 1.0 } else { -1.0 };
    let mut eps = tensor::zeros::<f64>();
    eps[0][0] = -sign * eps_s;
    eps[1][1] = 0.5 * sign * eps_s;
    eps[2][2] = 0.5 * sign * eps_s;
    NorSandState { elastic_strain: eps, p_i: prm.p_i0, vol_strain: 0.0, p_ref: prm.p0, plastic_shear: 0.0 }
}

/// Stress of a state, in plain values.
pub fn norsand_stress(state: &NorSandState, prm: &NorSandParams) -> Mat3<f64> {
    elastic_stress(&state.elastic_strain, state.p_ref, prm)
}

struct Trial<S> {
    eps_v: S,
    eps_s: S,
    v: S,
}

/// Local residual in unknowns `x = [ε_v^e, Δλ, p_i / |p_i,n|]`.
fn local_residual<S: Scalar>(x: &[S; 3], tr: &Trial<S>, st: &NorSandState, prm: &NorSandParams) -> [S; 3] {
    let pin = st.p_i.abs();
    let lt = prm.lambda_tilde;
    let (eps_v, dlam) = (x[0], x[1]);
    let p_i = x[2] * pin;
    let eps_s = tr.eps_s - dlam;
    let (p, a) = elastic_p(eps_v, st.p_ref, prm);
    let q = p * eps_s * (-3.0 * a);
    let eta = stress_ratio(p, p_i, prm);
    // Dilatancy from the current stress ratio q / |p|.
    let dil = ((q / p) + prm.m) / (1.0 - prm.n);
    let r1 = (eps_v - tr.eps_v - dlam * dil) / lt;
    let r2 = (q + eta * p) / st.p_ref.abs();
    let psi = tr.v - prm.v_c0 + (-p_i).ln() * lt;
    let p_star = p * (psi * (-prm.chi / prm.m)).exp();
    let r3 = (p_i * (dlam * prm.h_mod + 1.0) - st.p_i - dlam * p_star * prm.h_mod) / pin;
    [r1, r2, r3]
}

fn norm_inf(r: &[f64; 3]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn local_jacobian(
    x: &[f64; 3],
    tr: &Trial<f64>,
    st: &NorSandState,
    prm: &NorSandParams,
) -> Result<([[f64; 3]; 3], [f64; 3]), AdError> {
    let (tape, r) = record::<AdError, _>(x, |v| {
        let xv = [v[0], v[1], v[2]];
        let trv = Trial { eps_v: Var::constant(tr.eps_v), eps_s: Var::constant(tr.eps_s), v: Var::constant(tr.v) };
        Ok(local_residual(&xv, &trv, st, prm).to_vec())
    })?;
    let mut jac = [[0.0; 3]; 3];
    for (i, row) in jac.iter_mut().enumerate() {
        let mut seed = [0.0; 3];
        seed[i] = 1.0;
        let g = tape.backward(&seed)?;
        row.copy_from_slice(&g);
    }
    Ok((jac, [r[0], r[1], r[2]]))
}

fn inverse3(j: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let d = tensor::det(j);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some(tensor::inverse(j))
}

/// Implicit Nor-Sand update for a small-strain increment.
pub fn norsand_update<S: Scalar>(
    deps: &Mat3<S>,
    st: &NorSandState,
    prm: &NorSandParams,
) -> Result<NorSandResult<S>, ConstitutiveError> {
    let eps_tr = tensor::add(&tensor::lift(&st.elastic_strain), deps);
    let dvol = tensor::trace(deps);
    let vol_strain = st.vol_strain + dvol.value();
    let sigma_tr = elastic_stress(&eps_tr, st.p_ref, prm);
    let sigma_tr_v = tensor::values(&sigma_tr);
    let (p_tr, q_tr) = invariants(&sigma_tr_v);
    if !(p_tr < 0.0) {
        return Err(ConstitutiveError::ReturnMapping { iterations: 0, residual: f64::NAN, p: p_tr, q: q_tr });
    }
    let f_tr = q_tr + stress_ratio(p_tr, st.p_i, prm) * p_tr;
    if f_tr <= 1e-10 * p_tr.abs() {
        return Ok(NorSandResult {
            sigma: sigma_tr,
            state: NorSandState { elastic_strain: tensor::values(&eps_tr), vol_strain, ..st.clone() },
            plastic_increment: 0.0,
            local_iterations: 0,
        });
    }

    let e_tr = tensor::deviator(&eps_tr);
    let eps_s_tr = (tensor::ddot(&e_tr, &e_tr) * (2.0 / 3.0)).sqrt();
    let trial = Trial { eps_v: tensor::trace(&eps_tr), eps_s: eps_s_tr, v: (S::one() + st.vol_strain + dvol) * prm.v0 };
    let tr_v = Trial { eps_v: trial.eps_v.value(), eps_s: trial.eps_s.value(), v: trial.v.value() };

    let mut x = [tr_v.eps_v, 0.0, st.p_i / st.p_i.abs()];
    let mut r = local_residual(&x, &tr_v, st, prm);
    let mut iterations = 0;
    let mut jac;
    loop {
        let (j, _) = local_jacobian(&x, &tr_v, st, prm)?;
        jac = j;
        if norm_inf(&r) <= LOCAL_TOL {
            break;
        }
        if iterations >= LOCAL_MAX_ITERS {
            return Err(ConstitutiveError::ReturnMapping { iterations, residual: norm_inf(&r), p: p_tr, q: q_tr });
        }
        let inv = inverse3(&jac).ok_or(ConstitutiveError::ReturnMapping {
            iterations,
            residual: norm_inf(&r),
            p: p_tr,
            q: q_tr,
        })?;
        let dx = [0, 1, 2].map(|i| -(inv[i][0] * r[0] + inv[i][1] * r[1] + inv[i][2] * r[2]));
        let r0 = norm_inf(&r);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let xn = [x[0] + step * dx[0], x[1] + step * dx[1], x[2] + step * dx[2]];
            let admissible = xn[2] < 0.0 && xn[1] <= tr_v.eps_s && xn[1] >= -1e-12 * (1.0 + tr_v.eps_s);
            if admissible {
                let rn = local_residual(&xn, &tr_v, st, prm);
                if rn.iter().all(|v| v.is_finite()) && (norm_inf(&rn) < r0 || step < 1e-3) {
                    accepted = Some((xn, rn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, rn)) = accepted else {
            return Err(ConstitutiveError::ReturnMapping { iterations, residual: r0, p: p_tr, q: q_tr });
        };
        x = xn;
        r = rn;
        iterations += 1;
    }

    // Tangent-carrying correction: x_S = x* − J⁻¹ r(x*; trial_S).
    let inv = inverse3(&jac).ok_or(ConstitutiveError::ReturnMapping {
        iterations,
        residual: norm_inf(&r),
        p: p_tr,
        q: q_tr,
    })?;
    let xc = [S::cst(x[0]), S::cst(x[1]), S::cst(x[2])];
    let rs = local_residual(&xc, &trial, st, prm);
    let xs: [S; 3] = [0, 1, 2].map(|i| xc[i] - (rs[0] * inv[i][0] + rs[1] * inv[i][1] + rs[2] * inv[i][2]));

    let eps_s = trial.eps_s - xs[1];
    let e = tensor::scale(&e_tr, eps_s / trial.eps_s);
    let eps_e = tensor::add_diag(&e, xs[0] / 3.0);
    let sigma = elastic_stress(&eps_e, st.p_ref, prm);
    Ok(NorSandResult {
        sigma,
        state: NorSandState {
            elastic_strain: tensor::values(&eps_e),
            p_i: x[2] * st.p_i.abs(),
            vol_strain,
            p_ref: st.p_ref,
            plastic_shear: st.plastic_shear + x[1],
        },
        plastic_increment: x[1],
        local_iterations: iterations,
    })
}
