//! Quasi-static implicit material point method.
//!
//! One load step runs P2G (support, nodal masses, DOF numbering), a Newton
//! solve for the nodal displacement increment, and G2P (positions,
//! deformation gradients, volumes, particle domains, stress and history).
//! Weights and their gradients are evaluated at the configuration at the
//! start of the step, so connectivity is fixed inside the Newton loop.

mod grid;
mod output;

pub use grid::{DirichletRule, DofLayout, Grid, Side};
pub use output::{write_iteration_log, write_particles_csv, IterationRecord};

use std::time::Instant;

use thiserror::Error;

use crate::ad::{record, AdError, Scalar, Var};
use crate::constitutive::{stress_update, ConstitutiveError, History, Material, StressUpdate};
use crate::jacobian::{
    dense_jacobian, sparse_jacobian, InterferenceCheck, JacobianError, JacobianStats, JacobianStrategy,
};
use crate::linalg::{norm2, BandedLu, SolverError, SparseMatrix};
use crate::shape::{block_size, update_particle_domain, weight_nd, ShapeError, ShapeFunctionKind};
use crate::tensor::{self, Mat3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("particle {particle} support leaves the grid")]
    OutOfDomain { particle: usize },
    #[error("particle {particle}: {source}")]
    Constitutive { particle: usize, source: ConstitutiveError },
    #[error("particle {particle}: {source}")]
    Shape { particle: usize, source: ShapeError },
    #[error("particle {particle}: incremental deformation inverts the material (det = {det:.3e})")]
    Inverted { particle: usize, det: f64 },
    #[error("Newton did not converge at step {step}; relative residuals {residuals:?}")]
    NonConvergence { step: usize, residuals: Vec<f64> },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<csv::Error> for MpmError {
    fn from(e: csv::Error) -> Self {
        MpmError::Io(e.to_string())
    }
}

impl From<std::io::Error> for MpmError {
    fn from(e: std::io::Error) -> Self {
        MpmError::Io(e.to_string())
    }
}

impl MpmError {
    /// Newton or return-mapping failure, as opposed to bad input.
    pub fn is_nonconvergence(&self) -> bool {
        match self {
            MpmError::NonConvergence { .. } => true,
            MpmError::Constitutive { source, .. } => source.is_nonconvergence(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Reference position.
    pub x0: [f64; 3],
    pub x: [f64; 3],
    pub mass: f64,
    pub volume0: f64,
    pub volume: f64,
    pub f: Mat3<f64>,
    pub sigma: Mat3<f64>,
    pub lp0: [f64; 3],
    pub lp: [f64; 3],
    /// Body-force acceleration.
    pub gravity: [f64; 3],
    /// Point force at full load scale.
    pub load: [f64; 3],
    pub material: usize,
    pub history: History,
}

impl Particle {
    pub fn density(&self) -> f64 {
        self.mass / self.volume
    }

    pub fn displacement(&self) -> [f64; 3] {
        [self.x[0] - self.x0[0], self.x[1] - self.x0[1], self.x[2] - self.x0[2]]
    }
}

/// Fills the box `[lo, hi]` with `ppc` particles per cell and axis, placed
/// at sub-cell centres. Volumes are per unit thickness in 1D and 2D.
pub fn fill_box(
    dim: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    h: [f64; 3],
    ppc: usize,
    density: f64,
    material: usize,
) -> Vec<Particle> {
    let mut counts = [1usize; 3];
    let mut dx = [1.0; 3];
    for a in 0..dim {
        let cells = ((hi[a] - lo[a]) / h[a]).round().max(1.0) as usize;
        counts[a] = cells * ppc;
        dx[a] = (hi[a] - lo[a]) / counts[a] as f64;
    }
    let volume: f64 = dx[..dim].iter().product();
    let mut lp = [0.0; 3];
    for a in 0..dim {
        lp[a] = dx[a] / 2.0;
    }
    let mut out = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                let mut x = [0.0; 3];
                for a in 0..dim {
                    x[a] = lo[a] + (idx[a] as f64 + 0.5) * dx[a];
                }
                out.push(Particle {
                    x0: x,
                    x,
                    mass: density * volume,
                    volume0: volume,
                    volume,
                    f: tensor::identity(),
                    sigma: tensor::zeros(),
                    lp0: lp,
                    lp,
                    gravity: [0.0; 3],
                    load: [0.0; 3],
                    material,
                    history: History::None,
                });
            }
        }
    }
    out
}

/// Load factors per step; both gravity and point loads are scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSchedule {
    pub scales: Vec<f64>,
}

impl LoadSchedule {
    /// `steps` equal increments up to full load.
    pub fn linear(steps: usize) -> Self {
        Self { scales: (1..=steps).map(|k| k as f64 / steps as f64).collect() }
    }

    pub fn steps(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<(), MpmError> {
        if self.scales.is_empty() {
            return Err(MpmError::Config("load schedule has no steps".into()));
        }
        if self.scales.windows(2).any(|w| w[1] < w[0]) {
            return Err(MpmError::Config("load scales must be nondecreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative residual tolerance.
    pub tol: f64,
    /// Absolute residual floor below which a step is accepted outright.
    pub abs_tol: f64,
    pub max_iters: usize,
    /// Backtrack on the residual norm; without it only trial states the
    /// material cannot evaluate are shortened.
    pub line_search: bool,
    /// Nodes lighter than this fraction of the heaviest node are dropped
    /// at P2G (see [`p2g_with`]).
    pub node_mass_cutoff: f64,
    pub strategy: JacobianStrategy,
    pub check: InterferenceCheck,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            abs_tol: 1e-14,
            max_iters: 20,
            line_search: false,
            node_mass_cutoff: 1e-2,
            strategy: JacobianStrategy::Sparse,
            check: InterferenceCheck::default(),
        }
    }
}

/// Grid state for one step: particle supports with cached weights, nodal
/// masses, the active set and the DOF numbering.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub support_ptr: Vec<usize>,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
    pub node_mass: Vec<f64>,
    pub active: Vec<bool>,
    /// Particles whose supports lost dropped nodes (weights renormalized).
    pub truncated: Vec<bool>,
    pub layout: DofLayout,
}

impl StepContext {
    pub fn nodes_of(&self, p: usize) -> std::ops::Range<usize> {
        self.support_ptr[p]..self.support_ptr[p + 1]
    }

    /// Mass-weighted nodal value of a particle scalar.
    pub fn map_to_grid(&self, particles: &[Particle], value: impl Fn(&Particle) -> f64) -> Vec<f64> {
        let mut acc = vec![0.0; self.node_mass.len()];
        for (p, part) in particles.iter().enumerate() {
            let v = value(part);
            for k in self.nodes_of(p) {
                acc[self.support[k]] += self.weights[k] * part.mass * v;
            }
        }
        for (a, (m, act)) in acc.iter_mut().zip(self.node_mass.iter().zip(&self.active)) {
            *a = if *act { *a / m } else { 0.0 };
        }
        acc
    }
}

/// Particle state registered on a tape for sensitivity analysis.
#[derive(Debug, Clone)]
pub struct ActiveState<S> {
    pub x: Vec<[S; 3]>,
    pub f: Vec<Mat3<S>>,
}

/// Per-particle kinematics of an evaluated increment.
#[derive(Debug, Clone)]
pub struct ParticleIncrement<S> {
    pub du: [S; 3],
    pub f_delta: Mat3<S>,
    pub update: StressUpdate<S>,
}

#[derive(Debug, Clone)]
pub struct Assembly<S> {
    pub residual: Vec<S>,
    /// Per-DOF sum of absolute contributions, the scale of the round-off
    /// error in `residual`.
    pub magnitude: Vec<f64>,
    pub increments: Vec<ParticleIncrement<S>>,
}

/// Newton log for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub load_scale: f64,
    /// Relative residual norms, starting with 1 for the initial residual
    /// (empty when the step was accepted on the absolute floor).
    pub residuals: Vec<f64>,
    pub initial_residual: f64,
    /// Round-off bound of the final residual relative to the initial one;
    /// steps stop there even if `tol` is smaller.
    pub roundoff_floor: f64,
    pub iterations: usize,
    pub dofs: usize,
    pub jacobian: JacobianStats,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MpmModel {
    pub grid: Grid,
    pub kind: ShapeFunctionKind,
    pub materials: Vec<Material>,
    pub particles: Vec<Particle>,
    pub rules: Vec<DirichletRule>,
    pub settings: SolverSettings,
    /// Multiplier applied to every particle stress. Elastic stresses are
    /// linear in the modulus, so this scales the stiffness.
    pub stiffness_scale: f64,
}

impl MpmModel {
    pub fn new(
        grid: Grid,
        kind: ShapeFunctionKind,
        materials: Vec<Material>,
        mut particles: Vec<Particle>,
        rules: Vec<DirichletRule>,
        settings: SolverSettings,
    ) -> Result<Self, MpmError> {
        if particles.is_empty() {
            return Err(MpmError::Config("no particles".into()));
        }
        for m in &materials {
            m.validate().map_err(|e| MpmError::Config(e.to_string()))?;
        }
        for (i, p) in particles.iter_mut().enumerate() {
            let mat = materials
                .get(p.material)
                .ok_or_else(|| MpmError::Config(format!("particle {i} references missing material {}", p.material)))?;
            if !(p.mass > 0.0 && p.volume0 > 0.0) {
                return Err(MpmError::Config(format!("particle {i} needs positive mass and volume")));
            }
            for a in 0..grid.dim {
                crate::shape::check_half_width(p.lp[a], grid.h[a])
                    .map_err(|source| MpmError::Shape { particle: i, source })?;
            }
            if p.history == History::None {
                p.history = mat.initial_history();
            }
        }
        if !(settings.tol > 0.0) || settings.max_iters == 0 {
            return Err(MpmError::Config("solver tolerance and iteration limit must be positive".into()));
        }
        let model = Self { grid, kind, materials, particles, rules, settings, stiffness_scale: 1.0 };
        // Rejects bodies that do not fit and unusable shape functions.
        model.p2g()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Number of nodal fields (displacement components).
    pub fn fields(&self) -> usize {
        self.grid.dim
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    /// Particle-to-grid transfer at the current configuration.
    pub fn p2g(&self) -> Result<StepContext, MpmError> {
        p2g_with(&self.grid, self.kind, &self.particles, self.fields(), &self.rules, self.settings.node_mass_cutoff)
    }

    /// Residual at nodal increment `du` for the committed particle state.
    pub fn residual<S: Scalar>(&self, ctx: &StepContext, du: &[S], scale: f64) -> Result<Vec<S>, MpmError> {
        Ok(self.assemble(ctx, du, None, S::cst(self.stiffness_scale), scale, false)?.residual)
    }

    /// Generic residual kernel.
    ///
    /// With `state = None` the committed particle state and cached weights
    /// are used; otherwise positions and deformation gradients come from
    /// `state` and the weights are re-evaluated from them, which makes the
    /// residual differentiable with respect to the particle state.
    pub fn assemble<S: Scalar>(
        &self,
        ctx: &StepContext,
        du: &[S],
        state: Option<&ActiveState<S>>,
        stiffness: S,
        scale: f64,
        keep: bool,
    ) -> Result<Assembly<S>, MpmError> {
        let dim = self.dim();
        let mut residual = vec![S::zero(); ctx.layout.len()];
        let mut magnitude = vec![0.0; ctx.layout.len()];
        let mut increments = Vec::with_capacity(if keep { self.particles.len() } else { 0 });
        let mut w_buf: Vec<(S, [S; 3])> = Vec::new();
        for (p, part) in self.particles.iter().enumerate() {
            let range = ctx.nodes_of(p);
            w_buf.clear();
            let f_n: Mat3<S> = match state {
                None => {
                    for k in range.clone() {
                        let g = ctx.grads[k];
                        w_buf.push((S::cst(ctx.weights[k]), [S::cst(g[0]), S::cst(g[1]), S::cst(g[2])]));
                    }
                    tensor::lift(&part.f)
                }
                Some(st) => {
                    let f = st.f[p];
                    let mut lp = [S::zero(); 3];
                    for a in 0..dim {
                        lp[a] = f[a][a] * part.lp0[a];
                    }
                    for k in range.clone() {
                        let node = ctx.support[k];
                        let xi = self.grid.node_position(self.grid.node_ijk(node));
                        let wg = weight_nd(self.kind, dim, &st.x[p], &xi, &lp, &self.grid.h)
                            .map_err(|source| MpmError::Shape { particle: p, source })?;
                        w_buf.push(wg);
                    }
                    if ctx.truncated[p] {
                        renormalize(&mut w_buf);
                    }
                    f
                }
            };
            // Interpolated increment and its gradient.
            let mut du_p = [S::zero(); 3];
            let mut f_delta: Mat3<S> = tensor::identity();
            for (k, (w, g)) in range.clone().zip(w_buf.iter()) {
                let node = ctx.support[k];
                for a in 0..dim {
                    if let Some(d) = ctx.layout.dof(node, a) {
                        let u = du[d];
                        du_p[a] += *w * u;
                        for b in 0..dim {
                            f_delta[a][b] += u * g[b];
                        }
                    }
                }
            }
            let det = tensor::det(&f_delta).value();
            if !(det > 0.0) {
                return Err(MpmError::Inverted { particle: p, det });
            }
            let material = &self.materials[part.material];
            let mut update = stress_update(material, &part.history, &f_n, &f_delta)
                .map_err(|source| MpmError::Constitutive { particle: p, source })?;
            update.sigma = tensor::scale(&update.sigma, stiffness);
            // First Piola-type stress on the step-start configuration:
            // J_Δ σ ΔF⁻ᵀ = σ cof(ΔF).
            let piola = tensor::mul(&update.sigma, &tensor::cofactor(&f_delta));
            let v_n = match state {
                None => S::cst(part.volume),
                Some(_) => tensor::det(&f_n) * part.volume0,
            };
            let sigma_v = tensor::values(&update.sigma);
            let noise =
                (tensor::frob_norm(&sigma_v) + material.modulus_scale(&sigma_v) * stiffness.value()) * v_n.value();
            for (k, (w, g)) in range.zip(w_buf.iter()) {
                let node = ctx.support[k];
                for a in 0..dim {
                    let Some(d) = ctx.layout.dof(node, a) else { continue };
                    let mut fi = S::zero();
                    for b in 0..dim {
                        fi += piola[a][b] * g[b];
                    }
                    let ext = (part.mass * part.gravity[a] + part.load[a]) * scale;
                    let fi = fi * v_n;
                    magnitude[d] += noise * (g[0].value().abs() + g[1].value().abs() + g[2].value().abs())
                        + (w.value() * ext).abs();
                    residual[d] += fi - *w * ext;
                }
            }
            if keep {
                increments.push(ParticleIncrement { du: du_p, f_delta, update });
            }
        }
        Ok(Assembly { residual, magnitude, increments })
    }

    /// Records the residual at `du` and extracts its Jacobian.
    pub fn jacobian(
        &self,
        ctx: &StepContext,
        du: &[f64],
        scale: f64,
        strategy: JacobianStrategy,
    ) -> Result<(SparseMatrix, Vec<f64>, JacobianStats), MpmError> {
        let (tape, r) = record::<MpmError, _>(du, |u| self.residual::<Var>(ctx, u, scale))?;
        let n = ctx.layout.len();
        let (j, stats) = match strategy {
            JacobianStrategy::Dense => dense_jacobian(&tape, n)?,
            JacobianStrategy::Sparse => {
                sparse_jacobian(&tape, &self.grid, &ctx.layout, block_size(self.kind), self.settings.check)?
            }
        };
        Ok((j, r, stats))
    }

    /// Newton solve for the nodal increment of one load step. Returns the
    /// converged increment and the iteration log; the model is unchanged.
    pub fn newton(&self, ctx: &StepContext, step: usize, scale: f64) -> Result<(Vec<f64>, StepReport), MpmError> {
        let n = ctx.layout.len();
        let s = self.settings;
        let mut du = vec![0.0; n];
        let mut report = StepReport {
            step,
            load_scale: scale,
            residuals: Vec::new(),
            initial_residual: 0.0,
            roundoff_floor: 0.0,
            iterations: 0,
            dofs: n,
            jacobian: JacobianStats::default(),
            solve_seconds: 0.0,
        };
        let (mut r, mut floor) = self.residual_with_floor(ctx, &du, scale)?;
        let r0 = norm2(&r);
        report.initial_residual = r0;
        if r0 < s.abs_tol.max(floor) {
            return Ok((du, report));
        }
        report.residuals.push(1.0);
        let mut norm = r0;
        while norm > s.tol * r0 && norm > floor && norm > s.abs_tol {
            if report.iterations == s.max_iters {
                return Err(MpmError::NonConvergence { step, residuals: report.residuals });
            }
            let (jac, _, stats) = self.jacobian(ctx, &du, scale, s.strategy)?;
            report.jacobian.passes += stats.passes;
            report.jacobian.diff_seconds += stats.diff_seconds;
            let t = Instant::now();
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = BandedLu::factor(&jac)?.solve(&rhs)?;
            report.solve_seconds += t.elapsed().as_secs_f64();
            report.iterations += 1;
            // Backtracking: full steps whenever they reduce the residual norm
            // (Armijo, c = 1e-4), halving down to 1/64 otherwise and then
            // taking the best trial. States the material cannot evaluate
            // count as rejected trials.
            let mut alpha = 1.0;
            let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;
            loop {
                let trial: Vec<f64> = du.iter().zip(&delta).map(|(u, d)| u + alpha * d).collect();
                match self.residual_with_floor(ctx, &trial, scale) {
                    Ok((rt, ft)) => {
                        let nt = norm2(&rt);
                        if !s.line_search || nt <= (1.0 - 1e-4 * alpha) * norm {
                            best = Some((nt, trial, rt, ft));
                            break;
                        }
                        if best.as_ref().is_none_or(|b| nt < b.0) {
                            best = Some((nt, trial, rt, ft));
                        }
                    }
                    Err(e) if recoverable(&e) => {}
                    Err(e) => return Err(e),
                }
                if alpha <= MIN_STEP {
                    break;
                }
                alpha *= 0.5;
            }
            let Some((_, tu, tr, tf)) = best else {
                return Err(MpmError::NonConvergence { step, residuals: report.residuals });
            };
            du = tu;
            r = tr;
            floor = tf;
            norm = norm2(&r);
            report.residuals.push(norm / r0);
            if !norm.is_finite() {
                return Err(MpmError::NonConvergence { step, residuals: report.residuals });
            }
        }
        report.roundoff_floor = floor / r0;
        Ok((du, report))
    }

    /// Residual with the norm below which its value is round-off noise.
    fn residual_with_floor(&self, ctx: &StepContext, du: &[f64], scale: f64) -> Result<(Vec<f64>, f64), MpmError> {
        let asm = self.assemble::<f64>(ctx, du, None, self.stiffness_scale, scale, false)?;
        let floor = ROUNDOFF_FACTOR * f64::EPSILON * norm2(&asm.magnitude);
        Ok((asm.residual, floor))
    }

    /// Interpolates the converged increment to the particles and commits
    /// positions, deformation gradients, volumes, domains, stress and
    /// history.
    pub fn g2p_and_update(&mut self, ctx: &StepContext, du: &[f64], scale: f64) -> Result<(), MpmError> {
        let asm = self.assemble::<f64>(ctx, du, None, self.stiffness_scale, scale, true)?;
        let dim = self.dim();
        for (p, (part, inc)) in self.particles.iter_mut().zip(asm.increments).enumerate() {
            let f_new = tensor::mul(&inc.f_delta, &part.f);
            let lp = update_particle_domain(&f_new, &part.lp0, &self.grid.h, dim)
                .map_err(|source| MpmError::Shape { particle: p, source })?;
            for a in 0..dim {
                part.x[a] += inc.du[a];
            }
            part.f = f_new;
            part.volume = tensor::det(&f_new) * part.volume0;
            part.lp = lp;
            part.sigma = inc.update.sigma;
            if inc.update.history != History::None {
                part.history = inc.update.history;
            }
        }
        Ok(())
    }

    /// Runs one load step at load factor `scale`.
    pub fn step(&mut self, step: usize, scale: f64) -> Result<StepReport, MpmError> {
        let ctx = self.p2g()?;
        let (du, report) = self.newton(&ctx, step, scale)?;
        self.g2p_and_update(&ctx, &du, scale)?;
        Ok(report)
    }

    /// Runs a full schedule, calling `observe` after every step.
    pub fn run(
        &mut self,
        schedule: &LoadSchedule,
        mut observe: impl FnMut(&MpmModel, &StepReport) -> Result<(), MpmError>,
    ) -> Result<Vec<StepReport>, MpmError> {
        schedule.validate()?;
        let mut reports = Vec::with_capacity(schedule.steps());
        for (k, &scale) in schedule.scales.iter().enumerate() {
            let rep = self.step(k + 1, scale)?;
            observe(self, &rep)?;
            reports.push(rep);
        }
        Ok(reports)
    }
}

/// Multiple of machine epsilon times the summed absolute force
/// contributions that a residual cannot be expected to beat.
pub const ROUNDOFF_FACTOR: f64 = 4.0;

const MIN_STEP: f64 = 1.0 / 64.0;

fn recoverable(e: &MpmError) -> bool {
    matches!(e, MpmError::Inverted { .. } | MpmError::Constitutive { .. })
}

/// P2G for an arbitrary particle set: supports with weights, nodal masses,
/// active nodes (mass above `1e-12 ×` the largest particle mass) and the
/// DOF layout with `fields` components per node.
///
/// Nodes whose mass is below `mass_cutoff` times the largest nodal mass are
/// dropped: their DOFs would be almost free and give the Newton update
/// near-singular modes. Particles touching a dropped node have their
/// remaining weights renormalized, `w̃ = w / Σw` and
/// `∇w̃ = (∇w − w̃ Σ∇w) / Σw`, which keeps partition of unity exact.
pub fn p2g_with(
    grid: &Grid,
    kind: ShapeFunctionKind,
    particles: &[Particle],
    fields: usize,
    rules: &[DirichletRule],
    mass_cutoff: f64,
) -> Result<StepContext, MpmError> {
    let dim = grid.dim;
    let nn = grid.node_count();
    let per_axis = grid.nodes_per_axis();
    let mut ctx = StepContext {
        support_ptr: vec![0],
        support: Vec::new(),
        weights: Vec::new(),
        grads: Vec::new(),
        node_mass: vec![0.0; nn],
        active: vec![false; nn],
        truncated: vec![false; particles.len()],
        layout: DofLayout::empty(),
    };
    let max_mass = particles.iter().fold(0.0f64, |m, p| m.max(p.mass));
    for (p, part) in particles.iter().enumerate() {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..dim {
            let reach = match kind {
                ShapeFunctionKind::Linear => 0.0,
                _ => part.lp[a],
            };
            let left = part.x[a] - reach - grid.origin[a];
            let right = part.x[a] + reach - grid.origin[a];
            let extent = grid.cells[a] as f64 * grid.h[a];
            if !(left >= 0.0 && right <= extent) {
                return Err(MpmError::OutOfDomain { particle: p });
            }
            let span = match kind {
                ShapeFunctionKind::Linear => grid.h[a],
                _ => grid.h[a] + part.lp[a],
            };
            let c = part.x[a] - grid.origin[a];
            lo[a] = ((c - span) / grid.h[a]).floor().max(0.0) as usize;
            hi[a] = (((c + span) / grid.h[a]).ceil() as usize).min(per_axis[a] - 1);
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let node = grid.node_index([i, j, k]);
                    let xi = grid.node_position([i, j, k]);
                    let (w, g) = weight_nd::<f64>(kind, dim, &part.x, &xi, &part.lp, &grid.h)
                        .map_err(|source| MpmError::Shape { particle: p, source })?;
                    if w == 0.0 && g.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    ctx.support.push(node);
                    ctx.weights.push(w);
                    ctx.grads.push(g);
                    ctx.node_mass[node] += w * part.mass;
                }
            }
        }
        ctx.support_ptr.push(ctx.support.len());
    }
    let max_node = ctx.node_mass.iter().fold(0.0f64, |m, v| m.max(*v));
    let drop_below = mass_cutoff * max_node;
    if drop_below > 0.0 && ctx.node_mass.iter().any(|&m| m > 0.0 && m < drop_below) {
        truncate_supports(&mut ctx, particles, drop_below)?;
    }
    let cutoff = 1e-12 * max_mass;
    for (a, m) in ctx.active.iter_mut().zip(&ctx.node_mass) {
        *a = *m > cutoff;
    }
    ctx.layout = DofLayout::build(grid, &ctx.active, fields, rules);
    Ok(ctx)
}

fn renormalize<S: Scalar>(w: &mut [(S, [S; 3])]) {
    let mut sum_w = S::zero();
    let mut sum_g = [S::zero(); 3];
    for (wk, gk) in w.iter() {
        sum_w += *wk;
        for a in 0..3 {
            sum_g[a] += gk[a];
        }
    }
    for (wk, gk) in w.iter_mut() {
        *wk /= sum_w;
        for a in 0..3 {
            gk[a] = (gk[a] - *wk * sum_g[a]) / sum_w;
        }
    }
}

fn truncate_supports(ctx: &mut StepContext, particles: &[Particle], drop_below: f64) -> Result<(), MpmError> {
    let nn = ctx.node_mass.len();
    let old_mass = std::mem::replace(&mut ctx.node_mass, vec![0.0; nn]);
    let mut ptr = vec![0];
    let mut support = Vec::with_capacity(ctx.support.len());
    let mut weights = Vec::with_capacity(ctx.weights.len());
    let mut grads = Vec::with_capacity(ctx.grads.len());
    for (p, part) in particles.iter().enumerate() {
        let start = support.len();
        let mut sum_w = 0.0;
        let mut sum_g = [0.0; 3];
        for k in ctx.nodes_of(p) {
            let node = ctx.support[k];
            if old_mass[node] < drop_below {
                ctx.truncated[p] = true;
                continue;
            }
            support.push(node);
            weights.push(ctx.weights[k]);
            grads.push(ctx.grads[k]);
            sum_w += ctx.weights[k];
            for a in 0..3 {
                sum_g[a] += ctx.grads[k][a];
            }
        }
        if ctx.truncated[p] {
            if !(sum_w > 0.0) {
                return Err(MpmError::OutOfDomain { particle: p });
            }
            for k in start..support.len() {
                let w = weights[k] / sum_w;
                for a in 0..3 {
                    grads[k][a] = (grads[k][a] - w * sum_g[a]) / sum_w;
                }
                weights[k] = w;
            }
        }
        for k in start..support.len() {
            ctx.node_mass[support[k]] += weights[k] * part.mass;
        }
        ptr.push(support.len());
    }
    ctx.support_ptr = ptr;
    ctx.support = support;
    ctx.weights = weights;
    ctx.grads = grads;
    Ok(())
}
