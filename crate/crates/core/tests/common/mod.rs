//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use diffmpm_core::ad::{record, AdError, Var};
use diffmpm_core::config::ScenarioConfig;
use diffmpm_core::constitutive::{
    stress_update, ConstitutiveError, ElasticParams, History, J2Params, Material, NorSandParams,
};
use diffmpm_core::mpm::MpmModel;
use diffmpm_core::shape::{weight_nd, ShapeFunctionKind};
use diffmpm_core::tensor::Mat3;

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Loads a shipped config with its outputs redirected to `out`.
pub fn shipped_config(file: &str, out: &Path, overrides: &[&str]) -> ScenarioConfig {
    let mut all: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    all.push(format!("output.dir={:?}", out.display().to_string()));
    ScenarioConfig::load(&configs_dir().join(file), &all).unwrap()
}

/// Largest entrywise difference between the taped Jacobian of `f` and
/// central differences, relative to the largest Jacobian entry and
/// minimised over a three-step sweep.
pub fn fd_jacobian_error<E, F>(x: &[f64], f: F) -> f64
where
    E: std::fmt::Debug + From<AdError>,
    F: Fn(&[Var]) -> Result<Vec<Var>, E> + Copy,
{
    let (tape, y) = record(x, f).unwrap();
    let n_out = y.len();
    let mut jac = vec![vec![0.0; x.len()]; n_out];
    for (i, row) in jac.iter_mut().enumerate() {
        let mut seed = vec![0.0; n_out];
        seed[i] = 1.0;
        *row = tape.backward(&seed).unwrap();
    }
    let eval = |xv: &[f64]| record(xv, f).unwrap().1;
    fd_error_against(&jac, x, eval)
}

/// Same sweep for a Jacobian computed elsewhere.
pub fn fd_error_against(jac: &[Vec<f64>], x: &[f64], eval: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let scale = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
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
            for (i, row) in jac.iter().enumerate() {
                let fd = (yp[i] - ym[i]) / (2.0 * step);
                worst = worst.max((fd - row[k]).abs() / scale);
            }
        }
        best = best.min(worst);
    }
    best
}

fn flat(m: &Mat3<f64>) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn unflat(v: &[Var]) -> Mat3<Var> {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
}

fn lift(m: &Mat3<f64>) -> Mat3<Var> {
    m.map(|r| r.map(Var::constant))
}

/// A material evaluated at a committed state and an increment.
pub struct ConstitutiveCase {
    pub name: &'static str,
    pub material: Material,
    pub history: History,
    pub f_n: Mat3<f64>,
    pub f_delta: Mat3<f64>,
}

impl ConstitutiveCase {
    /// Stress as a function of the nine increment components, scaled by
    /// `1 / scale` so outputs are O(1).
    pub fn fd_error(&self) -> f64 {
        let scale = {
            let s = stress_update::<f64>(&self.material, &self.history, &self.f_n, &self.f_delta).unwrap().sigma;
            s.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0)
        };
        let f_n = lift(&self.f_n);
        fd_jacobian_error(&flat(&self.f_delta), |v: &[Var]| -> Result<Vec<Var>, ConstitutiveError> {
            let s = stress_update(&self.material, &self.history, &f_n, &unflat(v))?.sigma;
            Ok(s.iter().flatten().map(|x| *x / scale).collect())
        })
    }

    pub fn plastic_increment(&self) -> f64 {
        stress_update::<f64>(&self.material, &self.history, &self.f_n, &self.f_delta).unwrap().plastic_increment
    }
}

fn advance(material: &Material, history: History, f: Mat3<f64>, f_delta: &Mat3<f64>, n: usize) -> (History, Mat3<f64>) {
    let mut h = history;
    let mut f = f;
    for _ in 0..n {
        let u = stress_update::<f64>(material, &h, &f, f_delta).unwrap();
        if u.history != History::None {
            h = u.history;
        }
        f = diffmpm_core::tensor::mul(f_delta, &f);
    }
    (h, f)
}

/// Every stress function, with the plastic models taken into their
/// plastic range first.
pub fn constitutive_cases() -> Vec<ConstitutiveCase> {
    let el = ElasticParams::new(1e4, 0.3);
    let general = [[1.04, 0.03, -0.01], [0.02, 0.97, 0.02], [-0.01, 0.01, 1.02]];
    let identity = diffmpm_core::tensor::identity::<f64>();
    let mut cases = vec![
        ConstitutiveCase {
            name: "hencky",
            material: Material::Hencky(el),
            history: History::None,
            f_n: general,
            f_delta: general,
        },
        ConstitutiveCase {
            name: "neo-hookean",
            material: Material::NeoHookean(el),
            history: History::None,
            f_n: general,
            f_delta: general,
        },
        ConstitutiveCase {
            name: "linear-elastic",
            material: Material::LinearElastic(el),
            history: History::None,
            f_n: identity,
            f_delta: general,
        },
    ];
    let j2 = Material::HenckyJ2(J2Params { elastic: el, kappa: 200.0 });
    let shear = [[1.0, 0.02, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let (h, f) = advance(&j2, j2.initial_history(), identity, &shear, 3);
    cases.push(ConstitutiveCase { name: "hencky-j2 (plastic)", material: j2, history: h, f_n: f, f_delta: general });
    let compress = [[0.998, 0.0, 0.0], [0.0, 1.0006, 0.0], [0.0, 0.0, 1.0006]];
    for (name, prm) in [
        ("nor-sand loose (plastic)", NorSandParams::loose_brasted()),
        ("nor-sand dense (plastic)", NorSandParams::dense_brasted()),
    ] {
        let ns = Material::NorSand(prm);
        let (h, f) = advance(&ns, ns.initial_history(), identity, &compress, 4);
        let step = [[0.999, 1e-4, 0.0], [1e-4, 1.0002, 0.0], [0.0, 0.0, 1.0003]];
        cases.push(ConstitutiveCase { name, material: ns, history: h, f_n: f, f_delta: step });
    }
    cases
}

/// Taped residual Jacobian against central differences at a nonzero
/// increment of the current step.
pub fn residual_fd_error(model: &MpmModel, du_scale: f64) -> f64 {
    let ctx = model.p2g().unwrap();
    let n = ctx.layout.len();
    let du: Vec<f64> = (0..n).map(|i| du_scale * ((i as f64 * 0.7).sin())).collect();
    let (jac, r0, _) = model.jacobian(&ctx, &du, 1.0, diffmpm_core::jacobian::JacobianStrategy::Dense).unwrap();
    let scale = r0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let dense: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| jac.get(i, j) / scale).collect()).collect();
    let eval =
        |x: &[f64]| -> Vec<f64> { model.residual::<f64>(&ctx, x, 1.0).unwrap().iter().map(|v| v / scale).collect() };
    // Steps are relative to max(|x|, 1); rescale so they act on du.
    let stretch = 1.0 / du_scale;
    let xs: Vec<f64> = du.iter().map(|v| v * stretch).collect();
    let dense_s: Vec<Vec<f64>> = dense.iter().map(|row| row.iter().map(|v| v / stretch).collect()).collect();
    fd_error_against(&dense_s, &xs, |x| eval(&x.iter().map(|v| v / stretch).collect::<Vec<_>>()))
}

/// Largest deviation from `Σ w = 1` and `Σ ∇w = 0` for a particle at `xp`
/// with half-widths `lp` on a grid of spacing `h` anchored at the origin.
pub fn partition_of_unity_defect(kind: ShapeFunctionKind, dim: usize, xp: [f64; 3], lp: [f64; 3], h: [f64; 3]) -> f64 {
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..dim {
        lo[a] = ((xp[a] - lp[a]) / h[a]).floor() as i64 - 1;
        hi[a] = ((xp[a] + lp[a]) / h[a]).ceil() as i64 + 1;
    }
    let mut sw = 0.0;
    let mut sg = [0.0; 3];
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let xi = [i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]];
                let (w, g) = weight_nd(kind, dim, &xp, &xi, &lp, &h).unwrap();
                sw += w;
                for a in 0..3 {
                    sg[a] += g[a];
                }
            }
        }
    }
    // Gradients carry units of 1/h; compare them at unit scale.
    let mut worst = (sw - 1.0_f64).abs();
    for a in 0..dim {
        worst = worst.max((sg[a] * h[a]).abs());
    }
    worst
}
