//! Stiffness identification through the implicit simulation.
//!
//! The parameter is `θ = ln E`; particle stresses are scaled by
//! `exp(θ) / E_base`, which is exact for the elastic models whose stress is
//! linear in the modulus at fixed Poisson's ratio. Gradients come from a
//! discrete adjoint over load steps: each converged step is treated by the
//! implicit-function theorem, and the adjoint of the particle state
//! (positions and deformation gradients) is carried backwards.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{record, AdjointVector, Scalar, Var};
use crate::constitutive::Material;
use crate::jacobian::JacobianStrategy;
use crate::linalg::{BandedLu, SolverError};
use crate::mpm::{
    fill_box, ActiveState, DirichletRule, Grid, LoadSchedule, MpmError, MpmModel, Particle, Side, SolverSettings,
    StepContext,
};
use crate::shape::ShapeFunctionKind;
use crate::tensor::{self, Mat3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InverseError {
    #[error(transparent)]
    Forward(#[from] MpmError),
    #[error("adjoint solve failed: {0}")]
    Adjoint(SolverError),
    #[error("gradient descent diverged at iteration {iteration} (loss {loss:.3e} vs initial {initial:.3e}); reduce the learning rate")]
    Divergence { iteration: usize, loss: f64, initial: f64 },
    #[error("invalid inverse setup: {0}")]
    Config(String),
}

/// Force–displacement samples of the loaded particle set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub displacement: f64,
    pub force: f64,
}

/// Least-squares slope of force against displacement, with intercept.
pub fn fit_slope<S: Scalar>(d: &[S], f: &[f64]) -> S {
    let n = d.len() as f64;
    let dm = d.iter().copied().sum::<S>() / n;
    let fm = f.iter().sum::<f64>() / n;
    let mut sxy = S::zero();
    let mut sxx = S::zero();
    for (di, fi) in d.iter().zip(f) {
        let c = *di - dm;
        sxy += c * (fi - fm);
        sxx += c * c;
    }
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `(ln s − ln s_ref)²` with `s` the fitted force–displacement slope.
    SlopeOfForceDisplacement,
    /// `((d_N − d_ref) / d_ref)²` on the final displacement.
    TerminalDisplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub reference: Vec<ResponseSample>,
}

impl LossSpec {
    pub fn evaluate<S: Scalar>(&self, d: &[S], forces: &[f64]) -> S {
        match self.kind {
            LossKind::SlopeOfForceDisplacement => {
                let rd: Vec<f64> = self.reference.iter().map(|r| r.displacement).collect();
                let rf: Vec<f64> = self.reference.iter().map(|r| r.force).collect();
                let s_ref = fit_slope(&rd, &rf);
                let e = fit_slope(d, forces).ln() - s_ref.ln();
                e * e
            }
            LossKind::TerminalDisplacement => {
                let target = self.reference.last().map(|r| r.displacement).unwrap_or(0.0);
                let e = (*d.last().expect("at least one step") - target) / target;
                e * e
            }
        }
    }
}

/// Forward model with a designated loaded particle set whose mean
/// displacement along `axis` (sign-flipped so compression is positive)
/// is the response.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub model: MpmModel,
    pub schedule: LoadSchedule,
    pub loaded: Vec<usize>,
    pub axis: usize,
    /// Total applied force at full scale.
    pub total_force: f64,
    /// Modulus the material block was built with.
    pub e_base: f64,
}

/// Converged step kept for the reverse sweep.
#[derive(Debug, Clone)]
struct StepRecord {
    particles: Vec<Particle>,
    ctx: StepContext,
    du: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub theta: f64,
    pub response: Vec<ResponseSample>,
    steps: Vec<StepRecord>,
}

impl InverseProblem {
    /// Plane-strain strip load on a Neo-Hookean block. Symmetric half of
    /// width `width`, height `height`, load over `strip` at the top.
    pub fn strip_load(e_true: f64, pressure: f64, steps: usize, h: f64) -> Result<Self, MpmError> {
        let (width, height, strip) = (2.0, 2.0, 0.5);
        let ppc = 2;
        let grid = Grid::new(
            2,
            [-h, -h, 0.0],
            [h, h, 1.0],
            [(width / h).round() as usize + 2, (height / h).round() as usize + 2, 0],
        )?;
        let mut particles = fill_box(2, [0.0; 3], [width, height, 0.0], [h, h, 1.0], ppc, 1.0, 0);
        let top = particles.iter().fold(f64::MIN, |m, p| m.max(p.x[1]));
        let loaded: Vec<usize> = (0..particles.len())
            .filter(|&i| (particles[i].x[1] - top).abs() < 1e-9 && particles[i].x[0] < strip)
            .collect();
        let total_force = pressure * strip;
        for &i in &loaded {
            particles[i].load[1] = -total_force / loaded.len() as f64;
        }
        let rules = vec![
            DirichletRule::new(1, Side::Le, 0.0, &[0, 1]),
            DirichletRule::new(0, Side::Le, 0.0, &[0]),
            DirichletRule::new(0, Side::Ge, width, &[0]),
        ];
        let material = Material::NeoHookean(crate::constitutive::ElasticParams::new(e_true, 0.3));
        let model =
            MpmModel::new(grid, ShapeFunctionKind::Gimp, vec![material], particles, rules, SolverSettings::default())?;
        Ok(Self { model, schedule: LoadSchedule::linear(steps), loaded, axis: 1, total_force, e_base: e_true })
    }

    fn response_of(&self, particles: &[Particle]) -> f64 {
        -self.loaded.iter().map(|&i| particles[i].displacement()[self.axis]).sum::<f64>() / self.loaded.len() as f64
    }

    pub fn forces(&self) -> Vec<f64> {
        self.schedule.scales.iter().map(|s| s * self.total_force).collect()
    }

    /// Full forward run at `θ = ln E`, retaining converged steps.
    pub fn simulate(&self, theta: f64) -> Result<Simulation, InverseError> {
        if !theta.is_finite() {
            return Err(InverseError::Config(format!("parameter must be finite, got {theta}")));
        }
        let mut model = self.model.clone();
        model.stiffness_scale = theta.exp() / self.e_base;
        let mut steps = Vec::with_capacity(self.schedule.steps());
        let mut response = Vec::with_capacity(self.schedule.steps());
        for (k, &scale) in self.schedule.scales.iter().enumerate() {
            let ctx = model.p2g()?;
            let (du, _) = model.newton(&ctx, k + 1, scale)?;
            let particles = model.particles.clone();
            model.g2p_and_update(&ctx, &du, scale)?;
            response.push(ResponseSample {
                displacement: self.response_of(&model.particles),
                force: scale * self.total_force,
            });
            steps.push(StepRecord { particles, ctx, du, scale });
        }
        Ok(Simulation { theta, response, steps })
    }

    pub fn loss(&self, sim: &Simulation, spec: &LossSpec) -> f64 {
        let d: Vec<f64> = sim.response.iter().map(|r| r.displacement).collect();
        spec.evaluate(&d, &self.forces())
    }

    /// Loss and `dL/dθ` by the per-step adjoint.
    pub fn gradient(&self, sim: &Simulation, spec: &LossSpec) -> Result<(f64, f64), InverseError> {
        let forces = self.forces();
        let d: Vec<f64> = sim.response.iter().map(|r| r.displacement).collect();
        let (loss_tape, loss) = record::<MpmError, _>(&d, |v| Ok(vec![spec.evaluate(v, &forces)]))?;
        let d_bar = loss_tape.backward(&[1.0]).map_err(MpmError::from)?;
        let loss = loss[0];

        let dim = self.model.dim();
        let np = self.model.particles.len();
        let per = dim + dim * dim;
        let mut state_bar = vec![0.0; np * per];
        let mut theta_bar = 0.0;
        let mut model = self.model.clone();
        model.stiffness_scale = sim.theta.exp() / self.e_base;
        let mut adj = AdjointVector::default();
        for (k, rec) in sim.steps.iter().enumerate().rev() {
            model.particles.clone_from(&rec.particles);
            let n = rec.du.len();
            let (jac, _, _) = model.jacobian(&rec.ctx, &rec.du, rec.scale, JacobianStrategy::Sparse)?;
            let lu = BandedLu::factor(&jac).map_err(InverseError::Adjoint)?;

            let mut inputs = rec.du.clone();
            for p in &rec.particles {
                inputs.extend_from_slice(&p.x[..dim]);
                for a in 0..dim {
                    inputs.extend_from_slice(&p.f[a][..dim]);
                }
            }
            inputs.push(sim.theta);
            let (tape, _) = record::<MpmError, _>(&inputs, |v| step_outputs(&model, &rec.ctx, v, n, self, rec.scale))?;

            // Φ = ā·G + ḋ·d over the state map and response.
            let mut seed: Vec<(usize, f64)> =
                state_bar.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (n + i, *v)).collect();
            seed.push((n + np * per, d_bar[k]));
            tape.backward_sparse_into(&seed, &mut adj).map_err(MpmError::from)?;
            let g1 = adj.gradient(tape.input_count()).to_vec();
            let mu = lu.solve_transpose(&g1[..n]).map_err(InverseError::Adjoint)?;
            let seed2: Vec<(usize, f64)> = mu.iter().enumerate().map(|(i, m)| (i, -m)).collect();
            tape.backward_sparse_into(&seed2, &mut adj).map_err(MpmError::from)?;
            let g2 = adj.gradient(tape.input_count());
            for (i, sb) in state_bar.iter_mut().enumerate() {
                *sb = g1[n + i] + g2[n + i];
            }
            theta_bar += g1[n + np * per] + g2[n + np * per];
        }
        Ok((loss, theta_bar))
    }

    /// Reference response generated at `e_true`.
    pub fn reference(&self, e_true: f64) -> Result<Vec<ResponseSample>, InverseError> {
        Ok(self.simulate(e_true.ln())?.response)
    }
}

/// Residual, next particle state and response of one step as functions of
/// the increment, the step-start state and `θ`.
fn step_outputs(
    model: &MpmModel,
    ctx: &StepContext,
    v: &[Var],
    n: usize,
    problem: &InverseProblem,
    scale: f64,
) -> Result<Vec<Var>, MpmError> {
    let dim = model.dim();
    let np = model.particles.len();
    let per = dim + dim * dim;
    let (du, rest) = v.split_at(n);
    let mut state = ActiveState { x: Vec::with_capacity(np), f: Vec::with_capacity(np) };
    for p in 0..np {
        let s = &rest[p * per..(p + 1) * per];
        let mut x = [Var::constant(0.0); 3];
        x[..dim].copy_from_slice(&s[..dim]);
        let mut f: Mat3<Var> = tensor::identity();
        for a in 0..dim {
            for b in 0..dim {
                f[a][b] = s[dim + a * dim + b];
            }
        }
        state.x.push(x);
        state.f.push(f);
    }
    let theta = rest[np * per];
    let stiffness = theta.exp() / problem.e_base;
    let asm = model.assemble(ctx, du, Some(&state), stiffness, scale, true)?;
    let mut out = asm.residual;
    let mut resp = Var::constant(0.0);
    for (p, inc) in asm.increments.iter().enumerate() {
        let mut xn = state.x[p];
        for a in 0..dim {
            xn[a] += inc.du[a];
        }
        let fnew = tensor::mul(&inc.f_delta, &state.f[p]);
        out.extend_from_slice(&xn[..dim]);
        for a in 0..dim {
            out.extend_from_slice(&fnew[a][..dim]);
        }
        if problem.loaded.contains(&p) {
            resp -= xn[problem.axis] - model.particles[p].x0[problem.axis];
        }
    }
    out.push(resp / problem.loaded.len() as f64);
    Ok(out)
}

/// One optimizer iterate.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OptimizerRecord {
    pub iteration: usize,
    pub theta: f64,
    pub modulus: f64,
    pub loss: f64,
    pub gradient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub theta: f64,
    pub lr: f64,
    pub history: Vec<OptimizerRecord>,
    pub converged: bool,
}

/// Plain gradient descent `θ ← θ − lr · dL/dθ` on an objective returning
/// `(L, dL/dθ)`, stopping once the loss is at most `threshold`.
pub fn gradient_descent<F>(
    mut objective: F,
    theta0: f64,
    lr: f64,
    threshold: f64,
    max_iters: usize,
) -> Result<OptimizerState, InverseError>
where
    F: FnMut(f64) -> Result<(f64, f64), InverseError>,
{
    if !(lr > 0.0) {
        return Err(InverseError::Config(format!("learning rate must be positive, got {lr}")));
    }
    let mut state = OptimizerState { theta: theta0, lr, history: Vec::new(), converged: false };
    let mut initial = None;
    for it in 0..=max_iters {
        let (loss, grad) = objective(state.theta)?;
        let init = *initial.get_or_insert(loss);
        state.history.push(OptimizerRecord {
            iteration: it,
            theta: state.theta,
            modulus: state.theta.exp(),
            loss,
            gradient: grad,
        });
        if loss > 1e6 * init || !loss.is_finite() {
            return Err(InverseError::Divergence { iteration: it, loss, initial: init });
        }
        if loss <= threshold {
            state.converged = true;
            break;
        }
        if it == max_iters {
            break;
        }
        state.theta -= lr * grad;
    }
    Ok(state)
}

impl InverseProblem {
    /// Identifies `θ = ln E` from `theta0` by gradient descent.
    pub fn identify(
        &self,
        spec: &LossSpec,
        theta0: f64,
        lr: f64,
        threshold: f64,
        max_iters: usize,
    ) -> Result<OptimizerState, InverseError> {
        gradient_descent(
            |theta| {
                let sim = self.simulate(theta)?;
                self.gradient(&sim, spec)
            },
            theta0,
            lr,
            threshold,
            max_iters,
        )
    }
}

/// Adjoint sensitivity of a steady problem `r(u; θ) = 0` with loss
/// `L(u, θ)`: solves `Jᵀλ = ∂L/∂u` and returns `∂L/∂θ − λᵀ ∂r/∂θ`.
pub fn steady_adjoint_gradient<R, L>(u: &[f64], theta: f64, residual: R, loss: L) -> Result<f64, InverseError>
where
    R: Fn(&[Var], Var) -> Vec<Var>,
    L: Fn(&[Var], Var) -> Var,
{
    let n = u.len();
    let mut inputs = u.to_vec();
    inputs.push(theta);
    let (rt, _) = record::<MpmError, _>(&inputs, |v| Ok(residual(&v[..n], v[n])))?;
    let (lt, _) = record::<MpmError, _>(&inputs, |v| Ok(vec![loss(&v[..n], v[n])]))?;
    let lg = lt.backward(&[1.0]).map_err(MpmError::from)?;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let g = rt.backward(&e).expect("seed sized to outputs");
            g[..n].iter().enumerate().map(|(j, v)| (j, *v)).collect()
        })
        .collect();
    let j = crate::linalg::SparseMatrix::from_rows(n, rows);
    let lambda = BandedLu::factor(&j)
        .map_err(InverseError::Adjoint)?
        .solve_transpose(&lg[..n])
        .map_err(InverseError::Adjoint)?;
    let rg = rt.backward(&lambda).map_err(MpmError::from)?;
    Ok(lg[n] - rg[n])
}

pub fn write_optimization_csv(path: &Path, history: &[OptimizerRecord]) -> Result<(), MpmError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reference response with columns `displacement, force`.
pub fn write_reference_csv(path: &Path, samples: &[ResponseSample]) -> Result<(), MpmError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reference_csv(path: &Path) -> Result<Vec<ResponseSample>, MpmError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Result<Vec<ResponseSample>, _> = r.deserialize().collect();
    Ok(rows?)
}
