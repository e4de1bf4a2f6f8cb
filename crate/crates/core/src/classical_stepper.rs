//! Fully explicit reference scheme.
//!
//! Hydrodynamic fluxes use Rusanov finite volumes. The stiff pressure and
//! electric terms are explicit central differences. Only the Lorentz force is
//! implicit, which reduces to a closed-form rotation per cell. The stability
//! limit therefore scales like `h * sqrt(tau)`.

use serde::{Deserialize, Serialize};

use crate::ap_stepper::{PhysParams, PlasmaState, StepDiagnostics};
use crate::error::{Error, Result};
use crate::grid::{add, cross, dot, node_average, scale, sub, CellVecField, Grid, Vec3};
use crate::hyperbolic_flux::{check_state, rusanov_divergence, FvDivergence};
use crate::linalg::norm2;
use crate::stencil_ops::{apply_dh, restrict_interior, BField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalConfig {
    /// CFL safety factor in (0, 1].
    pub cfl: f64,
    /// Put the pressure inside the Rusanov flux instead of a central gradient.
    pub coupled_pressure: bool,
    /// Include the acoustic speed in the Rusanov viscosity. Without it the
    /// viscosity only covers convection, which is stable only while
    /// `c dt / h` stays very small.
    pub acoustic_viscosity: bool,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig { cfl: 0.9, coupled_pressure: false, acoustic_viscosity: true }
    }
}

impl ClassicalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParam(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        Ok(())
    }
}

/// Largest `|u| + sqrt(T_a / (eps_a tau))` over cells and species.
fn max_speed(state: &PlasmaState, p: &PhysParams) -> f64 {
    let mut m: f64 = 0.0;
    for (s, sp) in p.species().iter().enumerate() {
        let cs = (sp.temp / (sp.eps * p.tau)).sqrt();
        for (n, q) in state.n.iter().zip(state.q(s)) {
            m = m.max(dot(*q, *q).sqrt() / n + cs);
        }
    }
    m
}

/// Explicit time step bound `cfl * h / c_max`.
pub fn stable_dt(state: &PlasmaState, p: &PhysParams, cfg: &ClassicalConfig, g: &Grid) -> f64 {
    let h = g.d[..g.dim()].iter().copied().fold(f64::INFINITY, f64::min);
    cfg.cfl * h / max_speed(state, p)
}

/// True if any field is non-finite or the momentum grew by more than 1e6.
pub fn detect_blowup(state: &PlasmaState, initial_max_q: f64) -> bool {
    !state.is_finite() || state.max_q() > 1e6 * initial_max_q.max(f64::MIN_POSITIVE)
}

/// Unique solution of `v - mu v × B = r`.
#[inline]
pub fn rotation_solve(r: Vec3, bvec: Vec3, mu: f64) -> Vec3 {
    let b2 = dot(bvec, bvec);
    let num = add(add(r, scale(mu, cross(r, bvec))), scale(mu * mu * dot(r, bvec), bvec));
    scale(1.0 / (1.0 + mu * mu * b2), num)
}

/// Cell-centred central gradient with zero-gradient ghost cells.
pub fn central_gradient(u: &[f64], g: &Grid) -> CellVecField {
    let strides = [1, g.n[0], g.n[0] * g.n[1]];
    (0..g.num_cells())
        .map(|c| {
            let ijk = g.cell_ijk(c);
            let mut out = [0.0; 3];
            for a in 0..g.dim() {
                let lo = if ijk[a] > 0 { c - strides[a] } else { c };
                let hi = if ijk[a] + 1 < g.n[a] { c + strides[a] } else { c };
                out[a] = (u[hi] - u[lo]) / (2.0 * g.d[a]);
            }
            out
        })
        .collect()
}

fn full_divergence(n: &[f64], q: &[Vec3], pressure: Option<f64>, cs: f64, g: &Grid) -> FvDivergence {
    rusanov_divergence(
        g,
        n,
        q,
        |c, a| {
            let s = q[c][a] / n[c];
            let mut f = [q[c][a], s * q[c][0], s * q[c][1], s * q[c][2]];
            if let Some(k) = pressure {
                f[a + 1] += k * n[c];
            }
            f
        },
        |c, a| (q[c][a] / n[c]).abs() + cs,
    )
}

fn relative(terms: &[&[f64]], floor: f64) -> f64 {
    let n = terms[0].len();
    let sum: Vec<f64> = (0..n).map(|i| terms.iter().map(|t| t[i]).sum()).collect();
    let r = norm2(&sum);
    if r == 0.0 {
        return 0.0;
    }
    r / terms.iter().map(|t| norm2(t)).fold(floor, f64::max)
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|x| x.iter().copied()).collect()
}

/// Advances `state` by one explicit step of size `p.dt`.
pub fn step_classical(
    state: &PlasmaState,
    b: &BField,
    p: &PhysParams,
    cfg: &ClassicalConfig,
    g: &Grid,
    step_index: usize,
) -> Result<(PlasmaState, StepDiagnostics)> {
    p.validate()?;
    cfg.validate()?;
    if !(p.tau > 0.0) {
        return Err(Error::InvalidParam("time stepping needs tau > 0".into()));
    }
    let diverged = |reason: String| Error::Diverged { step: step_index, reason };
    let dt = p.dt;
    let species = p.species();

    let grad_n = central_gradient(&state.n, g);
    let grad_phi = central_gradient(&state.phi, g);
    let mut div = Vec::with_capacity(2);
    for (s, sp) in species.iter().enumerate() {
        check_state(&state.n, state.q(s)).map_err(|e| diverged(e.to_string()))?;
        let k = sp.temp / (sp.eps * p.tau);
        let pressure = cfg.coupled_pressure.then_some(k);
        let cs = if cfg.acoustic_viscosity { k.sqrt() } else { 0.0 };
        div.push(full_divergence(&state.n, state.q(s), pressure, cs, g));
    }

    let (ci, ce) = (species[0].c, species[1].c);
    let dphi: Vec<f64> = (0..g.num_cells())
        .map(|c| -dt * (div[0].mass[c] - div[1].mass[c]) / (ci - ce))
        .collect();
    let phi: Vec<f64> = state.phi.iter().zip(&dphi).map(|(a, d)| a + d).collect();
    let dn: Vec<f64> = (0..g.num_cells())
        .map(|c| -ci * dphi[c] - dt * div[0].mass[c])
        .collect();
    let n: Vec<f64> = state.n.iter().zip(&dn).map(|(a, d)| a + d).collect();
    if let Some(c) = n.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(diverged(format!("density {} at cell {c}", n[c])));
    }

    let mut q_new: Vec<CellVecField> = Vec::with_capacity(2);
    let mut forces: Vec<CellVecField> = Vec::with_capacity(2);
    for (s, sp) in species.iter().enumerate() {
        let inv = 1.0 / (sp.eps * p.tau);
        let mu = dt * sp.charge * inv;
        let f: CellVecField = (0..g.num_cells())
            .map(|c| {
                let pr = if cfg.coupled_pressure { [0.0; 3] } else { scale(sp.temp, grad_n[c]) };
                scale(inv, add(pr, scale(sp.charge * state.n[c], grad_phi[c])))
            })
            .collect();
        let q = state.q(s);
        q_new.push(
            (0..g.num_cells())
                .map(|c| {
                    let r = sub(q[c], scale(dt, add(div[s].mom[c], f[c])));
                    rotation_solve(r, scale(b.cell_mag[c], b.cell_b[c]), mu)
                })
                .collect(),
        );
        forces.push(f);
    }

    let qe = q_new.pop().expect("electrons");
    let qi = q_new.pop().expect("ions");
    let new = PlasmaState { n, qi, qe, phi, t: state.t + dt };
    if !new.is_finite() {
        return Err(diverged("non-finite field".into()));
    }

    // Residuals of the scheme's own discrete equations.
    let floor = 1e-10 * norm2(&new.n) / dt;
    let n_star = node_average(&new.n, g);
    let dh_n = restrict_interior(&apply_dh(&new.n, b, g), g);
    let dh_phi = restrict_interior(&apply_dh(&new.phi, b, g), g);
    let h_int: Vec<f64> = g.interior_nodes().iter().map(|&v| n_star[v]).collect();
    let mut d = StepDiagnostics::default();
    for (s, sp) in species.iter().enumerate() {
        let t_time: Vec<f64> = dn.iter().map(|x| x / dt).collect();
        let t_phi: Vec<f64> = dphi.iter().map(|x| sp.c * x / dt).collect();
        d.continuity[s] = relative(&[&t_time, &div[s].mass, &t_phi], floor);

        let inv = 1.0 / (sp.eps * p.tau);
        let (q0, q1) = (state.q(s), new.q(s));
        let t1 = flatten(&q1.iter().map(|x| scale(1.0 / dt, *x)).collect::<Vec<_>>());
        let t0 = flatten(&q0.iter().map(|x| scale(-1.0 / dt, *x)).collect::<Vec<_>>());
        let tl: Vec<Vec3> = (0..g.num_cells())
            .map(|c| scale(-sp.charge * inv * b.cell_mag[c], cross(q1[c], b.cell_b[c])))
            .collect();
        d.momentum[s] = relative(&[&t1, &t0, &flatten(&div[s].mom), &flatten(&forces[s]), &flatten(&tl)], 0.0);

        let ap: Vec<f64> = (0..h_int.len())
            .map(|k| sp.temp * dh_n[k] + sp.charge * h_int[k] * dh_phi[k])
            .collect();
        d.ap_node[s] = norm2(&ap) * g.cell_vol().sqrt();
    }
    Ok((new, d))
}
