use super::norsand::{invariants, norsand_stress};
use super::*;
use crate::ad::{record, Var};
use crate::tensor::{det, identity, lift, mul, mul_bt, transpose};

fn rotation(ax: f64, ay: f64, az: f64) -> Mat3<f64> {
    let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
    let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
    let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
    mul(&rz, &mul(&ry, &rx))
}

fn sample_f() -> Mat3<f64> {
    [[1.08, 0.05, -0.02], [0.03, 0.94, 0.04], [-0.01, 0.02, 1.03]]
}

fn flat(m: &Mat3<f64>) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn unflat<S: Scalar>(v: &[S]) -> Mat3<S> {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
}

/// Max relative difference between the taped Jacobian of `f` and central
/// differences, minimised over a step sweep.
fn fd_check<F>(x: &[f64], f: F) -> f64
where
    F: Fn(&[Var]) -> Result<Vec<Var>, ConstitutiveError> + Copy,
{
    let (tape, y) = record(x, f).unwrap();
    let n_out = y.len();
    let mut jac = vec![vec![0.0; x.len()]; n_out];
    for (i, row) in jac.iter_mut().enumerate() {
        let mut seed = vec![0.0; n_out];
        seed[i] = 1.0;
        *row = tape.backward(&seed).unwrap();
    }
    let scale = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let eval = |xv: &[f64]| record(xv, f).unwrap().1;
    let mut best = f64::INFINITY;
    for h in [1e-5, 1e-6, 1e-7] {
        let mut worst = 0.0f64;
        for k in 0..x.len() {
            let step = h * x[k].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += step;
            xm[k] -= step;
            let (yp, ym) = (eval(&xp), eval(&xm));
            for i in 0..n_out {
                let fd = (yp[i] - ym[i]) / (2.0 * step);
                worst = worst.max((fd - jac[i][k]).abs() / scale);
            }
        }
        best = best.min(worst);
    }
    best
}

#[test]
fn undeformed_and_rotated_states_are_stress_free() {
    let p = ElasticParams::new(1e4, 0.3);
    let r = rotation(0.3, -0.7, 1.1);
    for f in [identity(), r] {
        for s in [hencky_stress(&f, &p).unwrap(), neo_hookean_stress(&f, &p).unwrap()] {
            assert!(crate::tensor::frob_norm(&s) < 1e-10, "{s:?}");
        }
    }
}

#[test]
fn hencky_uniaxial_closed_form() {
    let p = ElasticParams::new(1e4, 0.0);
    for ls in [0.7, 0.95, 1.3] {
        let mut f = identity::<f64>();
        f[0][0] = ls;
        let s = hencky_stress(&f, &p).unwrap();
        let expected = 1e4 * f64::ln(ls) / ls;
        assert!((s[0][0] - expected).abs() < 1e-10 * 1e4);
        assert!(s[1][1].abs() < 1e-9 && s[2][2].abs() < 1e-9);
    }
}

#[test]
fn objectivity_of_elastic_models() {
    let p = ElasticParams::new(3e6, 0.25);
    let f = sample_f();
    for (ax, ay, az) in [(0.1, 0.2, 0.3), (1.2, -0.4, 2.0), (-2.5, 0.9, 0.05)] {
        let r = rotation(ax, ay, az);
        let rf = mul(&r, &f);
        type StressFn = fn(&Mat3<f64>, &ElasticParams) -> Result<Mat3<f64>, ConstitutiveError>;
        let checks: [StressFn; 2] = [hencky_stress, neo_hookean_stress];
        for model in checks {
            let s = model(&f, &p).unwrap();
            let rs = model(&rf, &p).unwrap();
            let rotated = mul(&r, &mul_bt(&s, &r));
            let scale = crate::tensor::frob_norm(&s);
            assert!(crate::tensor::max_abs_diff(&rs, &rotated) <= 1e-10 * scale);
        }
    }
}

#[test]
fn small_strain_agreement_with_linear_elasticity() {
    let p = ElasticParams::new(1e6, 0.3);
    let grad = [[0.3, -0.8, 0.1], [0.5, 0.2, -0.6], [0.9, 0.4, -0.1]];
    let delta = 1e-5;
    let f = crate::tensor::add(&identity(), &crate::tensor::scale(&grad, delta));
    let lin = linear_stress(&f, &p);
    // The discrepancy is second order in delta, measured against the modulus.
    for s in [hencky_stress(&f, &p).unwrap(), neo_hookean_stress(&f, &p).unwrap()] {
        assert!(crate::tensor::max_abs_diff(&s, &lin) <= 1e-8 * p.youngs_modulus);
    }
}

#[test]
fn j2_elastic_inside_yield() {
    let prm = J2Params { elastic: ElasticParams::new(1e4, 0.0), kappa: 5e3 };
    let mu = prm.elastic.mu();
    // Pure shear of magnitude giving sqrt(2 J2) = 0.5 kappa.
    let gamma = 0.5 * prm.kappa / (2.0 * mu * 2f64.sqrt());
    let eps = [[0.0, gamma, 0.0], [gamma, 0.0, 0.0], [0.0, 0.0, 0.0]];
    let be = crate::tensor::sym_fn(&eps, |x| (2.0 * x).exp());
    let r = j2_return_map(&be, 1.0, &prm);
    assert_eq!(r.plastic_increment, 0.0);
    assert!((r.sigma[0][1] - 2.0 * mu * gamma).abs() < 1e-9);
}

#[test]
fn j2_pure_shear_radial_return() {
    let prm = J2Params { elastic: ElasticParams::new(1e4, 0.2), kappa: 5e3 };
    let mu = prm.elastic.mu();
    let gamma = 2.0 * prm.kappa / (2.0 * mu * 2f64.sqrt());
    let eps = [[0.0, gamma, 0.0], [gamma, 0.0, 0.0], [0.0, 0.0, 0.0]];
    let be = crate::tensor::sym_fn(&eps, |x| (2.0 * x).exp());
    let r = j2_return_map(&be, 1.0, &prm);
    assert!((r.sigma[0][1] - 0.5 * 2.0 * mu * gamma).abs() < 1e-8);
    assert!(crate::tensor::trace(&r.sigma).abs() < 1e-8);
    let s = crate::tensor::deviator(&r.sigma);
    assert!((crate::tensor::frob_norm(&s) - prm.kappa).abs() < 1e-8);
}

#[test]
fn j2_cyclic_elastic_path_accumulates_nothing() {
    let material = Material::HenckyJ2(J2Params { elastic: ElasticParams::new(1e4, 0.0), kappa: 5e3 });
    let mut hist = material.initial_history();
    let mut f_n = identity::<f64>();
    let mut total = 0.0;
    for k in 0..12 {
        let a = if k % 2 == 0 { 1.02 } else { 1.0 / 1.02 };
        let mut fd = identity::<f64>();
        fd[0][0] = a;
        let up = stress_update(&material, &hist, &f_n, &fd).unwrap();
        total += up.plastic_increment;
        hist = up.history;
        f_n = mul(&fd, &f_n);
    }
    assert_eq!(total, 0.0);
}

#[test]
fn elastic_stress_functions_match_finite_differences() {
    let p = ElasticParams::new(5e3, 0.3);
    let x = flat(&sample_f());
    assert!(fd_check(&x, |v| Ok(flat_var(&hencky_stress(&unflat(v), &p)?))) < 1e-6);
    assert!(fd_check(&x, |v| Ok(flat_var(&neo_hookean_stress(&unflat(v), &p)?))) < 1e-6);
    assert!(fd_check(&x, |v| Ok(flat_var(&linear_stress(&unflat(v), &p)))) < 1e-6);
    let mut plane = identity::<f64>();
    plane[0][0] = 1.05;
    plane[0][1] = 0.1;
    plane[1][1] = 0.9;
    let x = flat(&plane);
    assert!(
        fd_check(&x, |v| {
            let mut f = unflat(v);
            // Keep the plane structure so the 2×2 logarithm is exercised.
            for (i, j) in [(0, 2), (1, 2), (2, 0), (2, 1)] {
                f[i][j] = Var::constant(0.0);
            }
            Ok(flat_var(&hencky_stress(&f, &p)?))
        }) < 1e-6
    );
}

#[test]
fn j2_tangent_matches_finite_differences() {
    let prm = J2Params { elastic: ElasticParams::new(1e4, 0.3), kappa: 5e2 };
    let x = flat(&sample_f());
    for kappa in [5e2, 5e4] {
        let prm = J2Params { kappa, ..prm };
        let err = fd_check(&x, |v| {
            let f = unflat(v);
            let be = mul_bt(&f, &f);
            Ok(flat_var(&j2_return_map(&be, det(&f), &prm).sigma))
        });
        assert!(err < 1e-6, "kappa {kappa}: {err}");
    }
}

fn flat_var(m: &Mat3<Var>) -> Vec<Var> {
    m.iter().flatten().copied().collect()
}

#[test]
fn norsand_initial_state_matches_in_situ_stress() {
    for prm in [NorSandParams::loose_brasted(), NorSandParams::dense_brasted()] {
        let st = norsand_initial_state(&prm);
        let s = norsand_stress(&st, &prm);
        let sv = 3.0 * prm.p0 / (1.0 + 2.0 * prm.k0);
        assert!((s[0][0] - sv).abs() < 1e-6 * sv.abs());
        assert!((s[1][1] - prm.k0 * sv).abs() < 1e-6 * sv.abs());
        assert!(norsand_yield(&s, st.p_i, &prm) < 0.0);
    }
}

#[test]
fn norsand_zero_increment_is_identity() {
    let prm = NorSandParams::loose_brasted();
    let st = norsand_initial_state(&prm);
    let r = norsand_update(&crate::tensor::zeros::<f64>(), &st, &prm).unwrap();
    assert_eq!(r.state, st);
    assert_eq!(r.sigma, norsand_stress(&st, &prm));
}

fn plastic_state(prm: &NorSandParams) -> NorSandState {
    let mut st = norsand_initial_state(prm);
    let mut d = crate::tensor::zeros::<f64>();
    d[0][0] = -2e-3;
    d[1][1] = 6e-4;
    d[2][2] = 6e-4;
    for _ in 0..4 {
        st = norsand_update(&d, &st, prm).unwrap().state;
    }
    st
}

#[test]
fn norsand_plastic_updates_stay_on_yield_surface() {
    for prm in [NorSandParams::loose_brasted(), NorSandParams::dense_brasted()] {
        let st = plastic_state(&prm);
        let mut d = crate::tensor::zeros::<f64>();
        d[0][0] = -1e-3;
        d[1][1] = 2e-4;
        d[2][2] = 3e-4;
        let r = norsand_update(&d, &st, &prm).unwrap();
        assert!(r.plastic_increment > 0.0);
        let (p, _) = invariants(&r.sigma);
        let f = norsand_yield(&r.sigma, r.state.p_i, &prm);
        assert!(f.abs() <= 1e-8 * p.abs(), "f = {f}");
    }
}

#[test]
fn norsand_tangent_matches_finite_differences() {
    for prm in [NorSandParams::loose_brasted(), NorSandParams::dense_brasted()] {
        let st = plastic_state(&prm);
        let (p, _) = invariants(&norsand_stress(&st, &prm));
        for d in [[-1e-3, 2e-4, 3e-4], [1e-5, -1e-5, 0.0]] {
            let x = vec![d[0], d[1], d[2], 1e-4];
            let err = fd_check(&x, |v| {
                let mut m = crate::tensor::zeros::<Var>();
                m[0][0] = v[0];
                m[1][1] = v[1];
                m[2][2] = v[2];
                m[0][1] = v[3];
                m[1][0] = v[3];
                let s = norsand_update(&m, &st, &prm)?.sigma;
                Ok(flat_var(&s).iter().map(|x| *x / p.abs()).collect())
            });
            assert!(err < 1e-6, "{err}");
        }
    }
}

#[test]
fn hencky_driver_uniaxial_stress() {
    let prm = ElasticParams::new(1e4, 0.0);
    let mut model = HenckyPoint::new(prm);
    let mut path = TriaxialPath::compression(-0.1, 10);
    path.lateral_stress = Some(0.0);
    let log = stress_point_drive(&mut model, &path).unwrap();
    for inc in &log.increments {
        assert!(inc.lateral_strain.abs() < 1e-12);
        let ls = 1.0 + inc.axial_strain;
        let expected = 1e4 * ls.ln() / ls;
        assert!((inc.q - expected.abs()).abs() < 1e-6 * 1e4);
    }
    let s = model.stress();
    let ls: f64 = 0.9;
    assert!((s[0][0] - 1e4 * ls.ln() / ls).abs() < 1e-8 * 1e4);
}

#[test]
fn rotation_helper_is_orthogonal() {
    let r = rotation(0.4, 0.5, 0.6);
    let rtr = mul(&transpose(&r), &r);
    assert!(crate::tensor::max_abs_diff(&rtr, &identity()) < 1e-14);
    let _ = lift::<f64>(&r);
}
