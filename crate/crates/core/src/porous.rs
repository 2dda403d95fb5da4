//! Small-strain u–p formulation for saturated porous media.
//!
//! Unknowns per step are the nodal displacement increment and the nodal
//! pore pressure at the end of the step. Total stress is `σ = σ′ − p I`
//! with linear elastic `σ′`; fluid mass balance with incompressible
//! constituents is integrated by backward Euler:
//! `∫ N tr(Δε) + Δt ∫ (k/μ_f) ∇N·∇p = 0`. Particles do not move.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::ad::{record, Scalar, Var};
use crate::constitutive::ElasticParams;
use crate::jacobian::{dense_jacobian, sparse_jacobian, InterferenceCheck, JacobianStats, JacobianStrategy};
use crate::linalg::{norm2, BandedLu, SparseMatrix};
use crate::mpm::{fill_box, p2g_with, DirichletRule, Grid, MpmError, Particle, Side, StepContext};
use crate::shape::{block_size, ShapeFunctionKind};
use crate::tensor::{self, Mat3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoroParams {
    /// Lamé parameters.
    pub lambda: f64,
    pub mu: f64,
    /// Intrinsic permeability.
    pub permeability: f64,
    /// Dynamic viscosity of the pore fluid.
    pub viscosity: f64,
    pub fluid_density: f64,
}

impl PoroParams {
    pub fn mobility(&self) -> f64 {
        self.permeability / self.viscosity
    }

    /// Constrained modulus `λ + 2μ`.
    pub fn oedometric_modulus(&self) -> f64 {
        self.lambda + 2.0 * self.mu
    }

    /// Consolidation coefficient `c_v = k (λ + 2μ) / μ_f`.
    pub fn consolidation_coefficient(&self) -> f64 {
        self.mobility() * self.oedometric_modulus()
    }

    pub fn validate(&self) -> Result<(), MpmError> {
        let ok = self.mu > 0.0
            && self.lambda + 2.0 * self.mu / 3.0 > 0.0
            && self.permeability > 0.0
            && self.viscosity > 0.0
            && self.fluid_density >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MpmError::Config(format!("invalid poromechanical parameters {self:?}")))
        }
    }
}

/// Per-particle state: committed small strain and interpolated pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct PoroParticle {
    pub strain: Mat3<f64>,
    pub pressure: f64,
    pub displacement: [f64; 3],
}

/// Coupled model on a fixed grid and particle set.
#[derive(Debug, Clone)]
pub struct PoroModel {
    pub grid: Grid,
    pub kind: ShapeFunctionKind,
    pub params: PoroParams,
    pub particles: Vec<Particle>,
    pub state: Vec<PoroParticle>,
    /// Total nodal displacement (`dim` per node) and pressure.
    pub nodal_displacement: Vec<[f64; 3]>,
    pub nodal_pressure: Vec<f64>,
    pub ctx: StepContext,
    pub strategy: JacobianStrategy,
    pub check: InterferenceCheck,
    pub tol: f64,
    pub max_iters: usize,
    /// Scale of the mass rows so both blocks carry force units.
    mass_scale: f64,
    /// Norm of the external force vector at unit load factor.
    load_norm: f64,
}

impl PoroModel {
    pub fn new(
        grid: Grid,
        kind: ShapeFunctionKind,
        params: PoroParams,
        particles: Vec<Particle>,
        rules: &[DirichletRule],
    ) -> Result<Self, MpmError> {
        params.validate()?;
        let fields = grid.dim + 1;
        let ctx = p2g_with(&grid, kind, &particles, fields, rules, 0.0)?;
        let nn = grid.node_count();
        let state = particles
            .iter()
            .map(|_| PoroParticle { strain: tensor::zeros(), pressure: 0.0, displacement: [0.0; 3] })
            .collect();
        let mass_scale = params.oedometric_modulus() / grid.h[0];
        let mut model = Self {
            grid,
            kind,
            params,
            particles,
            state,
            nodal_displacement: vec![[0.0; 3]; nn],
            nodal_pressure: vec![0.0; nn],
            ctx,
            strategy: JacobianStrategy::Sparse,
            check: InterferenceCheck::default(),
            tol: 1e-10,
            max_iters: 10,
            mass_scale,
            load_norm: 0.0,
        };
        let zero = vec![0.0; model.ctx.layout.len()];
        model.load_norm = norm2(&model.residual::<f64>(&zero, 1.0, 1.0)?);
        Ok(model)
    }

    pub fn fields(&self) -> usize {
        self.grid.dim + 1
    }

    /// Coupled residual at unknowns `x` (displacement increments and end
    /// of step pressures) for time step `dt` and load factor `scale`.
    pub fn residual<S: Scalar>(&self, x: &[S], dt: f64, scale: f64) -> Result<Vec<S>, MpmError> {
        if !(dt > 0.0) {
            return Err(MpmError::Config(format!("time step must be positive, got {dt}")));
        }
        let dim = self.grid.dim;
        let ctx = &self.ctx;
        let layout = &ctx.layout;
        let lam = self.params.lambda;
        let mu = self.params.mu;
        let mob = self.params.mobility() * dt;
        let mut r = vec![S::zero(); layout.len()];
        for (p, part) in self.particles.iter().enumerate() {
            let range = ctx.nodes_of(p);
            let mut grad: Mat3<S> = tensor::zeros();
            let mut pw = S::zero();
            let mut gp = [S::zero(); 3];
            for k in range.clone() {
                let node = ctx.support[k];
                let g = ctx.grads[k];
                for a in 0..dim {
                    if let Some(d) = layout.dof(node, a) {
                        for b in 0..dim {
                            grad[a][b] += x[d] * g[b];
                        }
                    }
                }
                if let Some(d) = layout.dof(node, dim) {
                    pw += x[d] * ctx.weights[k];
                    for b in 0..dim {
                        gp[b] += x[d] * g[b];
                    }
                }
            }
            let deps = tensor::sym(&grad);
            let eps = tensor::add(&deps, &tensor::lift(&self.state[p].strain));
            let tr = tensor::trace(&eps);
            let mut sigma = tensor::scale(&eps, S::cst(2.0 * mu));
            for a in 0..dim {
                sigma[a][a] += tr * lam - pw;
            }
            let dvol = tensor::trace(&deps);
            let v = part.volume0;
            for k in range {
                let node = ctx.support[k];
                let g = ctx.grads[k];
                let w = ctx.weights[k];
                for a in 0..dim {
                    if let Some(d) = layout.dof(node, a) {
                        let mut fi = S::zero();
                        for b in 0..dim {
                            fi += sigma[a][b] * g[b];
                        }
                        let ext = (part.mass * part.gravity[a] + part.load[a]) * scale;
                        r[d] += fi * v - w * ext;
                    }
                }
                if let Some(d) = layout.dof(node, dim) {
                    let mut flux = S::zero();
                    for b in 0..dim {
                        flux += gp[b] * g[b];
                    }
                    r[d] += (dvol * w + flux * mob) * (v * self.mass_scale);
                }
            }
        }
        Ok(r)
    }

    pub fn jacobian(
        &self,
        x: &[f64],
        dt: f64,
        scale: f64,
        strategy: JacobianStrategy,
    ) -> Result<(SparseMatrix, JacobianStats), MpmError> {
        let (tape, _) = record::<MpmError, _>(x, |v| self.residual::<Var>(v, dt, scale))?;
        let n = self.ctx.layout.len();
        Ok(match strategy {
            JacobianStrategy::Dense => dense_jacobian(&tape, n)?,
            JacobianStrategy::Sparse => {
                sparse_jacobian(&tape, &self.grid, &self.ctx.layout, block_size(self.kind), self.check)?
            }
        })
    }

    /// Initial unknowns: zero increments, pressures from the last step.
    fn initial_unknowns(&self) -> Vec<f64> {
        let layout = &self.ctx.layout;
        (0..layout.len())
            .map(|d| {
                let (node, f) = layout.node_of(d);
                if f == self.grid.dim {
                    self.nodal_pressure[node]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Advances one time step, reusing `factor` when it was built for the
    /// same `dt` (the system is linear, so its Jacobian is constant).
    pub fn step(
        &mut self,
        step: usize,
        dt: f64,
        scale: f64,
        factor: &mut Option<(f64, BandedLu)>,
        stats: &mut JacobianStats,
    ) -> Result<Vec<f64>, MpmError> {
        let mut x = self.initial_unknowns();
        let mut r = self.residual::<f64>(&x, dt, scale)?;
        // Normalized by the applied load as well, so a warm start near
        // equilibrium does not tighten the criterion below round-off.
        let r_ref = norm2(&r).max(scale * self.load_norm);
        let mut history = vec![1.0];
        if norm2(&r) < 1e-14 {
            self.commit(&x);
            return Ok(history);
        }
        if factor.as_ref().map(|(t, _)| *t != dt).unwrap_or(true) {
            let (jac, s) = self.jacobian(&x, dt, scale, self.strategy)?;
            stats.passes += s.passes;
            stats.diff_seconds += s.diff_seconds;
            *factor = Some((dt, BandedLu::factor(&jac)?));
        }
        let lu = &factor.as_ref().expect("factor set above").1;
        for _ in 0..self.max_iters {
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = lu.solve(&rhs)?;
            for (xi, d) in x.iter_mut().zip(&delta) {
                *xi += d;
            }
            r = self.residual::<f64>(&x, dt, scale)?;
            let rel = norm2(&r) / r_ref;
            history.push(rel);
            if rel <= self.tol || norm2(&r) < 1e-14 {
                self.commit(&x);
                return Ok(history);
            }
        }
        Err(MpmError::NonConvergence { step, residuals: history })
    }

    fn commit(&mut self, x: &[f64]) {
        let dim = self.grid.dim;
        let layout = &self.ctx.layout;
        for (d, &v) in x.iter().enumerate() {
            let (node, f) = layout.node_of(d);
            if f == dim {
                self.nodal_pressure[node] = v;
            } else {
                self.nodal_displacement[node][f] += v;
            }
        }
        let ctx = &self.ctx;
        for (p, st) in self.state.iter_mut().enumerate() {
            let mut grad: Mat3<f64> = tensor::zeros();
            let mut pw = 0.0;
            let mut disp = [0.0; 3];
            for k in ctx.nodes_of(p) {
                let node = ctx.support[k];
                let g = ctx.grads[k];
                let w = ctx.weights[k];
                for a in 0..dim {
                    if let Some(d) = layout.dof(node, a) {
                        for b in 0..dim {
                            grad[a][b] += x[d] * g[b];
                        }
                    }
                    disp[a] += w * self.nodal_displacement[node][a];
                }
                pw += w * self.nodal_pressure[node];
            }
            st.strain = tensor::add(&st.strain, &tensor::sym(&grad));
            st.pressure = pw;
            st.displacement = disp;
        }
    }
}

/// Terzaghi excess pore pressure ratio `p / p0` at depth `z` below the
/// drained surface for drainage length `h` and time factor `tv`.
pub fn terzaghi_pressure(z: f64, h: f64, tv: f64, terms: usize) -> f64 {
    (0..terms)
        .map(|m| {
            let k = (2 * m + 1) as f64 * PI / 2.0;
            2.0 / k * (k * z / h).sin() * (-k * k * tv).exp()
        })
        .sum()
}

/// Terzaghi average degree of consolidation.
pub fn terzaghi_degree(tv: f64, terms: usize) -> f64 {
    1.0 - (0..terms)
        .map(|m| {
            let k = (2 * m + 1) as f64 * PI / 2.0;
            2.0 / (k * k) * (-k * k * tv).exp()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidationSetup {
    pub dim: usize,
    pub height: f64,
    pub cells: usize,
    pub particles_per_cell: usize,
    pub elastic: ElasticParams,
    pub permeability: f64,
    pub viscosity: f64,
    pub fluid_density: f64,
    /// Surface load (compressive, positive).
    pub load: f64,
    pub dt: f64,
    /// Time factors at which profiles are recorded.
    pub report_tv: Vec<f64>,
    /// Time step growth factor applied once the last report is written.
    pub dt_growth: f64,
    /// Run ends at this time factor.
    pub final_tv: f64,
    pub strategy: JacobianStrategy,
}

impl ConsolidationSetup {
    /// 10 m column, 1 kPa surface load, λ = μ = 600 kPa, k = 1e-12 m²,
    /// Δt = 100 s, 100 cells with two particles per cell and axis. The
    /// viscosity is back-computed from `c_v = 1.8e-5 m²/s`.
    pub fn terzaghi_default() -> Self {
        let lambda = 600e3;
        let mu = 600e3;
        let k = 1e-12;
        let cv = 1.8e-5;
        Self {
            dim: 1,
            height: 10.0,
            cells: 100,
            particles_per_cell: 2,
            elastic: ElasticParams::from_lame(lambda, mu),
            permeability: k,
            viscosity: k * (lambda + 2.0 * mu) / cv,
            fluid_density: 1000.0,
            load: 1e3,
            dt: 100.0,
            report_tv: vec![0.05, 0.2, 0.5, 0.9],
            dt_growth: 1.2,
            final_tv: 10.0,
            strategy: JacobianStrategy::Sparse,
        }
    }

    pub fn params(&self) -> PoroParams {
        PoroParams {
            lambda: self.elastic.lambda(),
            mu: self.elastic.mu(),
            permeability: self.permeability,
            viscosity: self.viscosity,
            fluid_density: self.fluid_density,
        }
    }

    /// Column along axis 0 (vertical), base fixed and impermeable, top
    /// drained and loaded. Extra axes in 2D/3D get one cell with rollers.
    pub fn build(&self) -> Result<PoroModel, MpmError> {
        let h = self.height / self.cells as f64;
        let mut cells = [self.cells + 1, 0, 0];
        let mut hv = [h, h, h];
        for a in 1..self.dim {
            cells[a] = 1;
            hv[a] = h;
        }
        let grid = Grid::new(self.dim, [0.0; 3], hv, cells)?;
        let mut hi = [self.height, 0.0, 0.0];
        for a in 1..self.dim {
            hi[a] = h;
        }
        let mut particles = fill_box(self.dim, [0.0; 3], hi, hv, self.particles_per_cell, 1.0, 0);
        let top = particles.iter().fold(f64::MIN, |m, p| m.max(p.x[0]));
        let surface: Vec<usize> =
            (0..particles.len()).filter(|&i| (particles[i].x[0] - top).abs() < 1e-9 * self.height).collect();
        let area: f64 = hv[1..self.dim].iter().product();
        for &i in &surface {
            particles[i].load[0] = -self.load * area / surface.len() as f64;
        }
        let dim = self.dim;
        let mut rules =
            vec![DirichletRule::new(0, Side::Le, 0.0, &[0]), DirichletRule::new(0, Side::Ge, self.height, &[dim])];
        for a in 1..dim {
            rules.push(DirichletRule::new(a, Side::Le, 0.0, &[a]));
            rules.push(DirichletRule::new(a, Side::Ge, h, &[a]));
        }
        let mut model = PoroModel::new(grid, ShapeFunctionKind::Gimp, self.params(), particles, &rules)?;
        model.strategy = self.strategy;
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProfileRow {
    pub time: f64,
    pub tv: f64,
    pub depth: f64,
    pub pressure: f64,
    pub terzaghi: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SettlementRow {
    pub time: f64,
    pub tv: f64,
    pub settlement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub target_tv: f64,
    pub tv: f64,
    pub relative_l2: f64,
    pub rows: Vec<ProfileRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidationResult {
    pub profiles: Vec<ProfileReport>,
    pub settlement: Vec<SettlementRow>,
    pub final_settlement: f64,
    /// `t̂ H / (λ + 2μ)`.
    pub expected_settlement: f64,
    pub steps: usize,
    pub max_residual: f64,
    pub max_pressure_history: Vec<f64>,
    pub jacobian: JacobianStats,
}

pub fn consolidation_run(setup: &ConsolidationSetup) -> Result<ConsolidationResult, MpmError> {
    let mut model = setup.build()?;
    let cv = model.params.consolidation_coefficient();
    let h = setup.height;
    let top_node = model.grid.node_index([setup.cells, 0, 0]);
    let mut t = 0.0;
    let mut dt = setup.dt;
    let mut factor = None;
    let mut stats = JacobianStats::default();
    let mut profiles = Vec::new();
    let mut settlement = Vec::new();
    let mut targets = setup.report_tv.clone();
    targets.sort_by(f64::total_cmp);
    let mut next = 0;
    let mut steps = 0;
    let mut max_residual = 0.0f64;
    let mut max_pressure_history = Vec::new();
    loop {
        steps += 1;
        let hist = model.step(steps, dt, 1.0, &mut factor, &mut stats)?;
        max_residual = max_residual.max(*hist.last().unwrap_or(&0.0));
        t += dt;
        let tv = cv * t / (h * h);
        settlement.push(SettlementRow { time: t, tv, settlement: -model.nodal_displacement[top_node][0] });
        max_pressure_history.push(model.state.iter().map(|s| s.pressure).fold(f64::MIN, f64::max));
        while next < targets.len() && tv >= targets[next] * (1.0 - 1e-12) {
            let mut rows = Vec::with_capacity(model.particles.len());
            let (mut num, mut den) = (0.0, 0.0);
            for (part, st) in model.particles.iter().zip(&model.state) {
                let depth = h - part.x[0];
                let exact = setup.load * terzaghi_pressure(depth, h, tv, 200);
                num += (st.pressure - exact).powi(2);
                den += exact * exact;
                rows.push(ProfileRow { time: t, tv, depth, pressure: st.pressure, terzaghi: exact });
            }
            profiles.push(ProfileReport { target_tv: targets[next], tv, relative_l2: (num / den).sqrt(), rows });
            next += 1;
        }
        if next == targets.len() {
            if tv >= setup.final_tv {
                break;
            }
            dt *= setup.dt_growth;
        }
    }
    let expected = setup.load * h / model.params.oedometric_modulus();
    let final_settlement = settlement.last().map(|s| s.settlement).unwrap_or(0.0);
    Ok(ConsolidationResult {
        profiles,
        settlement,
        final_settlement,
        expected_settlement: expected,
        steps,
        max_residual,
        max_pressure_history,
        jacobian: stats,
    })
}

pub fn write_profiles_csv(path: &Path, profiles: &[ProfileReport]) -> Result<(), MpmError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in profiles {
        for r in &p.rows {
            w.serialize(r)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_settlement_csv(path: &Path, rows: &[SettlementRow]) -> Result<(), MpmError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn viscosity_reproduces_consolidation_coefficient() {
        let s = ConsolidationSetup::terzaghi_default();
        assert!((s.params().consolidation_coefficient() - 1.8e-5).abs() < 1e-18);
        assert!((s.viscosity - 0.1).abs() < 1e-12);
        assert!((s.elastic.lambda() - 600e3).abs() < 1e-6);
        assert!((s.elastic.mu() - 600e3).abs() < 1e-6);
    }

    #[test]
    fn series_limits() {
        // Drained surface, unit ratio at depth for early time, zero late.
        assert!(terzaghi_pressure(0.0, 10.0, 0.1, 200).abs() < 1e-12);
        assert!((terzaghi_pressure(10.0, 10.0, 1e-4, 200) - 1.0).abs() < 1e-3);
        assert!(terzaghi_pressure(5.0, 10.0, 5.0, 200) < 1e-4);
        assert!((terzaghi_degree(0.2, 200) - (4.0 * 0.2 / PI).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn zero_load_zero_pressure_gives_zero_residual() {
        let mut s = ConsolidationSetup::terzaghi_default();
        s.cells = 10;
        s.height = 1.0;
        let m = s.build().unwrap();
        let x = vec![0.0; m.ctx.layout.len()];
        let r = m.residual::<f64>(&x, 100.0, 0.0).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
        assert!(m.residual::<f64>(&x, 0.0, 0.0).is_err());
    }

    #[test]
    fn undrained_load_is_carried_by_the_fluid() {
        let mut s = ConsolidationSetup::terzaghi_default();
        s.cells = 10;
        s.height = 1.0;
        let mut m = s.build().unwrap();
        let mut factor = None;
        let mut stats = JacobianStats::default();
        m.step(1, 1e-6, 1.0, &mut factor, &mut stats).unwrap();
        // Far below the stable step the unstabilized equal-order pair shows
        // a two-cell checkerboard; away from the drained surface its mean
        // still carries the whole load.
        let below: Vec<f64> =
            m.particles.iter().zip(&m.state).filter(|(p, _)| p.x[0] < 0.8).map(|(_, st)| st.pressure).collect();
        let mean = below.iter().sum::<f64>() / below.len() as f64;
        assert!((mean - s.load).abs() < 1e-3 * s.load, "{mean}");
        assert!(below.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn coupled_sparse_matches_dense() {
        let mut s = ConsolidationSetup::terzaghi_default();
        s.cells = 10;
        s.height = 1.0;
        let m = s.build().unwrap();
        let x: Vec<f64> = (0..m.ctx.layout.len()).map(|i| 1e-4 * ((i * 7) % 5) as f64).collect();
        let (d, ds) = m.jacobian(&x, 100.0, 1.0, JacobianStrategy::Dense).unwrap();
        let (sp, ss) = m.jacobian(&x, 100.0, 1.0, JacobianStrategy::Sparse).unwrap();
        assert!(d.max_relative_difference(&sp) <= 1e-12);
        assert_eq!(ds.passes, m.ctx.layout.len());
        assert_eq!(ss.passes, 5 * m.fields());
    }
}
