//! One step of the asymptotic-preserving scheme.
//!
//! The implicit parallel momenta are eliminated from the two continuity
//! equations, which leaves two anisotropic diffusion problems: one for the
//! density `n` and one for the potential `phi`. Both are solved in increment
//! form with the micro-macro solver. The momenta are then rebuilt from the
//! new `n` and `phi`: the parallel part explicitly and the perpendicular part
//! through a closed-form 2x2 rotation solve.
//!
//! Parallel fluxes of cell vectors are evaluated as `dhstar(b · NA((b ⊗ b) v))`
//! with `NA` the node average, so that on `n` and `phi` they reduce exactly to
//! the three-point composite `dhstar ∘ dh`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ap_diffusion::{solve_micro_macro, AnisoDiffusionProblem, DiffusionOperators, MicroForm};
use crate::error::{Error, Result};
use crate::grid::{
    add, cell_from_nodes, cell_from_nodes_vec, cross, dot, node_average, par, scale, sub, CellField, CellVecField,
    Grid, NodeField, Vec3,
};
use crate::hyperbolic_flux::{fv_divergence, FvDivergence};
use crate::linalg::norm2;
use crate::stencil_ops::{apply_dhstar, apply_grad_star, extend_interior, BField};

/// Which normalization of the potential equation to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiNormalization {
    /// Divides the combined continuity equation by `1 + T_e`, the factor that
    /// multiplies the potential diffusion operator after elimination.
    #[default]
    Consistent,
    /// Divides by `T_e - 1` instead. The resulting scheme no longer satisfies
    /// the two continuity equations; kept for comparison.
    Published,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub tau: f64,
    /// Electron to ion mass ratio.
    pub eps: f64,
    /// Electron temperature (the ion temperature is 1).
    pub te: f64,
    /// Regularization constant of quasi-neutrality.
    pub c: f64,
    pub dt: f64,
    #[serde(default)]
    pub phi_normalization: PhiNormalization,
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.te > 0.0) {
            return bad(format!("te must be > 0, got {}", self.te));
        }
        if self.phi_normalization == PhiNormalization::Published && self.te == 1.0 {
            return bad("te = 1 makes lambda2 singular under the published normalization".into());
        }
        if !(self.c > 0.0) {
            return bad(format!("c must be > 0 (c = 0 leaves the potential undetermined), got {}", self.c));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        Ok(())
    }

    pub fn c_i(&self) -> f64 {
        self.te * self.c / (1.0 + self.te)
    }

    pub fn c_e(&self) -> f64 {
        -self.te * self.c / (self.eps * (1.0 + self.te))
    }

    pub fn lambda1(&self) -> f64 {
        (1.0 + self.eps) / (self.dt * self.dt * (1.0 + self.te))
    }

    /// Prefactor of the potential equation.
    fn kappa(&self) -> f64 {
        match self.phi_normalization {
            PhiNormalization::Consistent => 1.0 / (1.0 + self.te),
            PhiNormalization::Published => 1.0 / (self.te - 1.0),
        }
    }

    pub fn lambda2(&self) -> f64 {
        self.kappa() * self.te * self.c / (self.dt * self.dt)
    }

    pub fn species(&self) -> [Species; 2] {
        [
            Species { eps: 1.0, temp: 1.0, charge: 1.0, c: self.c_i() },
            Species { eps: self.eps, temp: self.te, charge: -1.0, c: self.c_e() },
        ]
    }
}

/// Per-species constants: `eps_a`, `T_a`, charge sign and `C_a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Species {
    pub eps: f64,
    pub temp: f64,
    pub charge: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasmaState {
    pub n: CellField,
    pub qi: CellVecField,
    pub qe: CellVecField,
    pub phi: CellField,
    pub t: f64,
}

impl PlasmaState {
    pub fn q(&self, s: usize) -> &CellVecField {
        if s == 0 {
            &self.qi
        } else {
            &self.qe
        }
    }

    pub fn is_finite(&self) -> bool {
        self.n.iter().chain(&self.phi).all(|x| x.is_finite())
            && self.qi.iter().chain(&self.qe).all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Largest momentum component magnitude over both species.
    pub fn max_q(&self) -> f64 {
        self.qi
            .iter()
            .chain(&self.qe)
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest entry-wise difference over all fields.
    pub fn max_diff(&self, other: &PlasmaState) -> f64 {
        let s = self.n.iter().zip(&other.n).chain(self.phi.iter().zip(&other.phi));
        let v = self.qi.iter().zip(&other.qi).chain(self.qe.iter().zip(&other.qe));
        let a = s.fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
        v.fold(a, |m, (x, y)| (0..3).fold(m, |m, k| m.max((x[k] - y[k]).abs())))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Discrete continuity residuals (ions, electrons), relative to the
    /// largest term.
    pub continuity: [f64; 2],
    /// Discrete momentum residuals, relative to the largest term.
    pub momentum: [f64; 2],
    /// `|T_a dh n + q_a n_* dh phi|_2` on interior nodes.
    pub ap_node: [f64; 2],
    /// Continuity residual with the parallel flux taken from the node average
    /// of the updated cell momenta (informative only).
    pub continuity_cell_flux: [f64; 2],
    pub solver_iterations: usize,
    pub diverged: bool,
}

impl StepDiagnostics {
    /// Largest derivation-consistency residual.
    pub fn max_consistency(&self) -> f64 {
        self.continuity.iter().chain(&self.momentum).fold(0.0, |m, &x| m.max(x))
    }
}

/// Supplies the field at a given time.
pub trait FieldProvider: Send + Sync {
    fn field(&self, t: f64) -> Arc<BField>;
}

#[derive(Clone, Debug)]
pub struct StaticField(pub Arc<BField>);

impl FieldProvider for StaticField {
    fn field(&self, _t: f64) -> Arc<BField> {
        self.0.clone()
    }
}

/// Node average of the cell vectors `(b ⊗ b) v`, projected on node `b`.
fn parallel_node_flux(v: &[Vec3], b: &BField, g: &Grid) -> NodeField {
    let pv: Vec<Vec3> = v.iter().zip(&b.cell_b).map(|(x, bc)| par(*bc, *x)).collect();
    let comp: Vec<NodeField> = (0..3)
        .map(|k| node_average(&pv.iter().map(|x| x[k]).collect::<Vec<_>>(), g))
        .collect();
    (0..g.num_nodes())
        .map(|n| dot(b.node_b[n], [comp[0][n], comp[1][n], comp[2][n]]))
        .collect()
}

/// Explicit ingredients of a step, shared by the assembly and the residuals.
#[derive(Clone, Debug)]
pub struct ExplicitPart {
    pub fv: [FvDivergence; 2],
    /// Node parallel flux of `q - dt * div(q ⊗ q / n)` per species.
    pub zeta: [NodeField; 2],
}

pub fn explicit_part(state: &PlasmaState, b: &BField, p: &PhysParams, g: &Grid) -> Result<ExplicitPart> {
    let mut fv = Vec::with_capacity(2);
    let mut zeta = Vec::with_capacity(2);
    for s in 0..2 {
        let q = state.q(s);
        let d = fv_divergence(&state.n, q, &b.cell_b, g)?;
        let v: Vec<Vec3> = q.iter().zip(&d.mom).map(|(x, m)| sub(*x, scale(p.dt, *m))).collect();
        zeta.push(parallel_node_flux(&v, b, g));
        fv.push(d);
    }
    let fv: [FvDivergence; 2] = fv.try_into().expect("two species");
    let zeta: [NodeField; 2] = zeta.try_into().expect("two species");
    Ok(ExplicitPart { fv, zeta })
}

/// Source of the density equation without its `lambda1 n^m` part.
fn r_tilde(ex: &ExplicitPart, b: &BField, p: &PhysParams, g: &Grid) -> CellField {
    let w: NodeField = ex.zeta[0].iter().zip(&ex.zeta[1]).map(|(a, e)| a + p.eps * e).collect();
    let div = apply_dhstar(&w, b, g);
    let k = -1.0 / ((1.0 + p.te) * p.dt);
    (0..g.num_cells())
        .map(|c| k * (div[c] + ex.fv[0].mass[c] + p.eps * ex.fv[1].mass[c]))
        .collect()
}

/// Source of the potential equation without its `lambda2 phi^m` part.
fn s_tilde(ex: &ExplicitPart, dn: &[f64], b: &BField, p: &PhysParams, g: &Grid) -> CellField {
    let w: NodeField = ex.zeta[0]
        .iter()
        .zip(&ex.zeta[1])
        .map(|(a, e)| p.te * a - p.eps * e)
        .collect();
    let div = apply_dhstar(&w, b, g);
    let (k, dt) = (p.kappa(), p.dt);
    (0..g.num_cells())
        .map(|c| {
            let m = p.te * ex.fv[0].mass[c] - p.eps * ex.fv[1].mass[c];
            k * ((p.eps - p.te) * dn[c] / (dt * dt) - (div[c] + m) / dt)
        })
        .collect()
}

/// Right-hand side `R` of the density equation.
pub fn assemble_r(state: &PlasmaState, b: &BField, p: &PhysParams, g: &Grid) -> Result<CellField> {
    let ex = explicit_part(state, b, p, g)?;
    let rt = r_tilde(&ex, b, p, g);
    Ok(state.n.iter().zip(&rt).map(|(n, r)| p.lambda1() * n + r).collect())
}

/// Right-hand side `S` of the potential equation, given the new density.
pub fn assemble_s(state: &PlasmaState, n_new: &[f64], b: &BField, p: &PhysParams, g: &Grid) -> Result<CellField> {
    let ex = explicit_part(state, b, p, g)?;
    let dn: Vec<f64> = n_new.iter().zip(&state.n).map(|(a, b)| a - b).collect();
    let st = s_tilde(&ex, &dn, b, p, g);
    Ok(state.phi.iter().zip(&st).map(|(f, s)| p.lambda2() * f + s).collect())
}

/// Solution `v` of `v - gamma b × v = r` for `r` perpendicular to `b`.
#[inline]
pub fn solve_perp(r: Vec3, b: Vec3, gamma: f64) -> Vec3 {
    scale(1.0 / (1.0 + gamma * gamma), add(r, scale(gamma, cross(b, r))))
}

/// Node forces of the new `n` and `phi` for one species.
struct Forces {
    /// Parallel force on nodes: `T dh n + q n_* dh phi`, zero on the boundary.
    par_node: NodeField,
    /// Cell average of `par_node`.
    par_cell: CellField,
    /// Cell average of the full node force `T grad n + q n_* grad phi`.
    full_cell: CellVecField,
}

struct NewFields<'a> {
    gn: Vec<f64>,
    gphi: Vec<f64>,
    h_int: Vec<f64>,
    grad_n: Vec<Vec3>,
    grad_phi: Vec<Vec3>,
    n_star: NodeField,
    g: &'a Grid,
}

impl<'a> NewFields<'a> {
    fn new(ops: &DiffusionOperators, n: &[f64], phi: &[f64], g: &'a Grid) -> Self {
        let n_star = node_average(n, g);
        NewFields {
            gn: ops.g.matvec(n),
            gphi: ops.g.matvec(phi),
            h_int: g.interior_nodes().iter().map(|&v| n_star[v]).collect(),
            grad_n: apply_grad_star(n, g),
            grad_phi: apply_grad_star(phi, g),
            n_star,
            g,
        }
    }

    fn ap_node(&self, sp: &Species) -> Vec<f64> {
        (0..self.gn.len())
            .map(|k| sp.temp * self.gn[k] + sp.charge * self.h_int[k] * self.gphi[k])
            .collect()
    }

    fn forces(&self, sp: &Species) -> Forces {
        let g = self.g;
        let par_node = extend_interior(&self.ap_node(sp), g);
        let full: Vec<Vec3> = (0..g.num_nodes())
            .map(|v| add(scale(sp.temp, self.grad_n[v]), scale(sp.charge * self.n_star[v], self.grad_phi[v])))
            .collect();
        Forces {
            par_cell: cell_from_nodes(&par_node, g),
            par_node,
            full_cell: cell_from_nodes_vec(&full, g),
        }
    }
}

/// New momentum of one species.
fn update_momentum(q: &[Vec3], fv: &FvDivergence, f: &Forces, sp: &Species, b: &BField, p: &PhysParams) -> CellVecField {
    let (dt, tau) = (p.dt, p.tau);
    (0..q.len())
        .map(|c| {
            let (bc, mag) = (b.cell_b[c], b.cell_mag[c]);
            let base = sub(q[c], scale(dt, fv.mom[c]));
            let q_par = scale(dot(bc, base) - dt / (sp.eps * tau) * f.par_cell[c], bc);
            let expl = add(scale(-1.0 / dt, q[c]), fv.mom[c]);
            let r = add(
                scale(sp.charge / mag, cross(bc, f.full_cell[c])),
                scale(sp.charge * sp.eps * tau / mag, cross(bc, expl)),
            );
            let gamma = sp.charge * sp.eps * tau / (dt * mag);
            add(q_par, solve_perp(r, bc, gamma))
        })
        .collect()
}

/// `|a_0 + a_1 + ...|_2 / max(max_k |a_k|_2, extra_scale)`, zero when the sum vanishes.
fn relative(terms: &[&[f64]], extra_scale: f64) -> f64 {
    let n = terms[0].len();
    let sum: Vec<f64> = (0..n).map(|i| terms.iter().map(|t| t[i]).sum()).collect();
    let scale = terms.iter().map(|t| norm2(t)).fold(extra_scale, f64::max);
    let r = norm2(&sum);
    if r == 0.0 {
        0.0
    } else {
        r / scale
    }
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|x| x.iter().copied()).collect()
}

/// Plugs two consecutive states into the discrete two-fluid equations.
///
/// `increments` carries the exact `(n_new - n, phi_new - phi)` when known;
/// recomputing them from the stored fields loses most digits when the
/// increments are tiny compared with the fields.
pub fn step_residuals(
    old: &PlasmaState,
    new: &PlasmaState,
    increments: Option<(&[f64], &[f64])>,
    b: &BField,
    p: &PhysParams,
    g: &Grid,
    ops: &DiffusionOperators,
) -> Result<StepDiagnostics> {
    let ex = explicit_part(old, b, p, g)?;
    let (dn, dphi): (Vec<f64>, Vec<f64>) = match increments {
        Some((a, b)) => (a.to_vec(), b.to_vec()),
        None => (
            new.n.iter().zip(&old.n).map(|(a, b)| a - b).collect(),
            new.phi.iter().zip(&old.phi).map(|(a, b)| a - b).collect(),
        ),
    };
    let nf = NewFields::new(ops, &new.n, &new.phi, g);
    let dt = p.dt;
    // Per-step changes below 1e-10 of the density are rounding noise; without
    // this floor an exactly stationary state would give 0/0-like ratios.
    let floor = 1e-10 * norm2(&new.n) / dt;
    let mut d = StepDiagnostics::default();
    for (s, sp) in p.species().iter().enumerate() {
        let forces = nf.forces(sp);
        let k = dt / (sp.eps * p.tau);
        let t_time: Vec<f64> = dn.iter().map(|x| x / dt).collect();
        let t_expl = apply_dhstar(&ex.zeta[s], b, g);
        let t_force: Vec<f64> = apply_dhstar(&forces.par_node, b, g).iter().map(|x| -k * x).collect();
        let t_phi: Vec<f64> = dphi.iter().map(|x| sp.c * x / dt).collect();
        d.continuity[s] = relative(&[&t_time, &t_expl, &t_force, &ex.fv[s].mass, &t_phi], floor);

        let t_cell = apply_dhstar(&parallel_node_flux(new.q(s), b, g), b, g);
        d.continuity_cell_flux[s] = relative(&[&t_time, &t_cell, &ex.fv[s].mass, &t_phi], floor);

        let (q0, q1) = (old.q(s), new.q(s));
        let inv = 1.0 / (sp.eps * p.tau);
        let t_q1: Vec<Vec3> = q1.iter().map(|x| scale(1.0 / dt, *x)).collect();
        let t_q0: Vec<Vec3> = q0.iter().map(|x| scale(-1.0 / dt, *x)).collect();
        let t_f: Vec<Vec3> = (0..g.num_cells())
            .map(|c| {
                let bc = b.cell_b[c];
                let fc = add(scale(forces.par_cell[c], bc), sub(forces.full_cell[c], par(bc, forces.full_cell[c])));
                scale(inv, fc)
            })
            .collect();
        let t_l: Vec<Vec3> = (0..g.num_cells())
            .map(|c| scale(-sp.charge * inv * b.cell_mag[c], cross(q1[c], b.cell_b[c])))
            .collect();
        let (a, bb, cc, dd, ee) = (flatten(&t_q1), flatten(&t_q0), flatten(&ex.fv[s].mom), flatten(&t_f), flatten(&t_l));
        d.momentum[s] = relative(&[&a, &bb, &cc, &dd, &ee], 0.0);

        d.ap_node[s] = norm2(&nf.ap_node(sp)) * g.cell_vol().sqrt();
    }
    Ok(d)
}

/// Asymptotic-preserving stepper with cached operators.
pub struct ApStepper {
    pub grid: Arc<Grid>,
    pub params: PhysParams,
    provider: Arc<dyn FieldProvider>,
    cache: Option<(Arc<BField>, DiffusionOperators)>,
    pub micro_form: MicroForm,
}

impl ApStepper {
    pub fn new(grid: Arc<Grid>, params: PhysParams, provider: Arc<dyn FieldProvider>) -> Result<Self> {
        params.validate()?;
        if !(params.tau > 0.0) {
            return Err(Error::InvalidParam("time stepping needs tau > 0".into()));
        }
        Ok(ApStepper { grid, params, provider, cache: None, micro_form: MicroForm::Single })
    }

    fn operators(&mut self, b: &Arc<BField>) -> &mut DiffusionOperators {
        let stale = self.cache.as_ref().is_none_or(|(cb, _)| !Arc::ptr_eq(cb, b));
        if stale {
            self.cache = Some((b.clone(), DiffusionOperators::new(b, &self.grid)));
        }
        &mut self.cache.as_mut().expect("just filled").1
    }

    /// Advances `state` by one step.
    pub fn step(&mut self, state: &PlasmaState, step_index: usize) -> Result<(PlasmaState, StepDiagnostics)> {
        let p = self.params;
        let g = self.grid.clone();
        let b = self.provider.field(state.t + p.dt);
        let diverged = |reason: String| Error::Diverged { step: step_index, reason };

        let ex = explicit_part(state, &b, &p, &g).map_err(|e| diverged(e.to_string()))?;
        let ops = self.operators(&b);
        let mut iters = 0;

        let rt = r_tilde(&ex, &b, &p, &g);
        let src_n = ops.g.matvec(&state.n);
        let prob = AnisoDiffusionProblem {
            b: &b,
            h_coeff: None,
            lambda: p.lambda1(),
            tau: p.tau,
            f: &rt,
            source: Some(&src_n),
        };
        let sol = solve_micro_macro(ops, &prob, &g, MicroForm::Single)?;
        iters += sol.iterations;
        let dn = sol.p;
        let n_new: Vec<f64> = state.n.iter().zip(&dn).map(|(a, d)| a + d).collect();
        if let Some(c) = n_new.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(diverged(format!("density {} at cell {c}", n_new[c])));
        }

        let n_star = node_average(&n_new, &g);
        let st = s_tilde(&ex, &dn, &b, &p, &g);
        let gphi = ops.g.matvec(&state.phi);
        let src_phi: Vec<f64> = gphi
            .iter()
            .zip(g.interior_nodes())
            .map(|(x, &v)| x * n_star[v])
            .collect();
        let prob = AnisoDiffusionProblem {
            b: &b,
            h_coeff: Some(&n_star),
            lambda: p.lambda2(),
            tau: p.tau,
            f: &st,
            source: Some(&src_phi),
        };
        let sol = solve_micro_macro(ops, &prob, &g, MicroForm::Single)?;
        iters += sol.iterations;
        let dphi = sol.p;
        let phi_new: Vec<f64> = state.phi.iter().zip(&dphi).map(|(a, d)| a + d).collect();

        let nf = NewFields::new(ops, &n_new, &phi_new, &g);
        let mut q_new = Vec::with_capacity(2);
        for (s, sp) in p.species().iter().enumerate() {
            let f = nf.forces(sp);
            q_new.push(update_momentum(state.q(s), &ex.fv[s], &f, sp, &b, &p));
        }
        let qe = q_new.pop().expect("electrons");
        let qi = q_new.pop().expect("ions");
        let new = PlasmaState { n: n_new, qi, qe, phi: phi_new, t: state.t + p.dt };
        if !new.is_finite() {
            return Err(diverged("non-finite field".into()));
        }
        let ops = &self.cache.as_ref().expect("operators built").1;
        let mut diag = step_residuals(state, &new, Some((&dn, &dphi)), &b, &p, &g, ops)?;
        diag.solver_iterations = iters;
        Ok((new, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cross, GridSpec};
    use approx::assert_relative_eq;

    fn params() -> PhysParams {
        PhysParams { tau: 1e-8, eps: 1.0, te: 3.0, c: 1e-2, dt: 1e-6, phi_normalization: PhiNormalization::Consistent }
    }

    fn stationary(g: &Grid, bv: Vec3) -> PlasmaState {
        let nc = g.num_cells();
        PlasmaState { n: vec![1.0; nc], qi: vec![bv; nc], qe: vec![bv; nc], phi: vec![0.0; nc], t: 0.0 }
    }

    #[test]
    fn derived_constants() {
        let p = params();
        assert!((p.c_i() + p.eps * p.c_e()).abs() < 1e-18);
        assert_relative_eq!(p.c_i() - p.eps / p.te * p.c_e(), p.c, epsilon = 1e-15);
        assert_relative_eq!(p.te * p.c_i() - p.eps * p.c_e(), p.te * p.c, epsilon = 1e-15);
        assert_relative_eq!(p.lambda1(), 2.0 / (4.0 * 1e-12), epsilon = 1e-3);
    }

    #[test]
    fn validation() {
        let mut p = params();
        p.tau = -1.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.c = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.te = 1.0;
        assert!(p.validate().is_ok());
        p.phi_normalization = PhiNormalization::Published;
        assert!(p.validate().is_err());
    }

    #[test]
    fn perp_closed_form() {
        let v = solve_perp([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 1.0);
        assert_relative_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.5, epsilon = 1e-15);
        let back = sub(v, cross([0.0, 0.0, 1.0], v));
        assert_relative_eq!(back[0], 1.0, epsilon = 1e-15);
        assert!(back[1].abs() < 1e-15);
        assert_eq!(solve_perp([0.3, -0.2, 0.0], [0.0, 0.0, 1.0], 0.0), [0.3, -0.2, 0.0]);
    }

    #[test]
    fn stationary_sources() {
        let g = Grid::new(GridSpec::square(1.0, 2.0, 6)).unwrap();
        let a = 2.0 * std::f64::consts::PI / 3.0;
        let bv = [a.sin(), -a.cos(), 0.0];
        let b = BField::uniform(&g, bv).unwrap();
        let p = params();
        let mut st = stationary(&g, bv);
        let r = assemble_r(&st, &b, &p, &g).unwrap();
        for x in r {
            assert_relative_eq!(x, (1.0 + p.eps) / ((1.0 + p.te) * p.dt * p.dt), max_relative = 1e-14);
        }
        let s = assemble_s(&st, &st.n.clone(), &b, &p, &g).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
        st.phi = vec![0.25; g.num_cells()];
        let s = assemble_s(&st, &st.n.clone(), &b, &p, &g).unwrap();
        for x in s {
            assert_relative_eq!(x, p.lambda2() * 0.25, max_relative = 1e-14);
        }
    }

    #[test]
    fn dt_scaling_of_r() {
        let g = Grid::new(GridSpec::square(1.0, 2.0, 6)).unwrap();
        let b = BField::uniform(&g, [0.6, 0.8, 0.0]).unwrap();
        let mut st = stationary(&g, [0.0; 3]);
        st.n = g.cell_centers().iter().map(|x| 1.0 + 0.1 * x[0]).collect();
        st.qi = g.cell_centers().iter().map(|x| [0.1 * x[1], 0.0, 0.0]).collect();
        let p1 = params();
        let p2 = PhysParams { dt: 2.0 * p1.dt, ..p1 };
        let r1 = assemble_r(&st, &b, &p1, &g).unwrap();
        let r2 = assemble_r(&st, &b, &p2, &g).unwrap();
        // Density part scales like 1/dt^2, flux part like 1/dt (plus an
        // O(dt^0) convective correction).
        for c in 0..g.num_cells() {
            let d1 = r1[c] - p1.lambda1() * st.n[c];
            let d2 = r2[c] - p2.lambda1() * st.n[c];
            assert_relative_eq!(p1.lambda1() / p2.lambda1(), 4.0, epsilon = 1e-12);
            assert_relative_eq!(d1, 2.0 * d2, max_relative = 1e-3);
        }
    }

    #[test]
    fn stationary_state_is_preserved() {
        let g = Arc::new(Grid::new(GridSpec::square(1.0, 2.0, 10)).unwrap());
        let a = 2.0 * std::f64::consts::PI / 3.0;
        let bv = [a.sin(), -a.cos(), 0.0];
        let b = Arc::new(BField::uniform(&g, bv).unwrap());
        let mut stepper = ApStepper::new(g.clone(), params(), Arc::new(StaticField(b))).unwrap();
        let s0 = stationary(&g, bv);
        let mut s = s0.clone();
        for k in 0..5 {
            let (n, d) = stepper.step(&s, k).unwrap();
            assert!(d.max_consistency() <= 1e-8, "{d:?}");
            s = n;
        }
        assert!(s.max_diff(&s0) <= 1e-12);
    }

    fn perturbed(g: &Grid, bv: Vec3, tau: f64) -> PlasmaState {
        let mut s = stationary(g, bv);
        s.n = g
            .cell_centers()
            .iter()
            .map(|x| 1.0 + tau * (1.0 - 80.0 * (x[0] - 1.5).powi(2) - 80.0 * (x[1] - 1.5).powi(2)).max(0.0))
            .collect();
        s
    }

    #[test]
    fn perturbed_step_is_consistent() {
        let g = Arc::new(Grid::new(GridSpec::square(1.0, 2.0, 20)).unwrap());
        let a = 2.0 * std::f64::consts::PI / 3.0;
        let bv = [a.sin(), -a.cos(), 0.0];
        let b = Arc::new(BField::uniform(&g, bv).unwrap());
        for norm in [PhiNormalization::Consistent, PhiNormalization::Published] {
            let p = PhysParams { phi_normalization: norm, ..params() };
            let mut stepper = ApStepper::new(g.clone(), p, Arc::new(StaticField(b.clone()))).unwrap();
            let mut s = perturbed(&g, bv, p.tau);
            for k in 0..3 {
                let (n, d) = stepper.step(&s, k).unwrap();
                match norm {
                    PhiNormalization::Consistent => assert!(d.max_consistency() <= 1e-6, "{d:?}"),
                    PhiNormalization::Published => assert!(d.continuity[0] > 1e-2, "{d:?}"),
                }
                s = n;
            }
        }
    }
}
