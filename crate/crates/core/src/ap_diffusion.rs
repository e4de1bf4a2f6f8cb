//! Degenerate anisotropic diffusion
//!
//! ```text
//! -dhstar(H dh p) + tau lambda p = tau f + dhstar(s)
//! ```
//!
//! solved through the micro-macro split `p = pi + q`, with `pi` in the kernel
//! of `dh` and `q = dhstar(l)`. Writing `G` for the interior `dh` matrix (so
//! `dhstar = -G^T`) and `N = G G^T`:
//!
//! ```text
//! N h = G f / lambda,            pi = f / lambda - G^T h
//! (N + tau lambda H^-1) l = H^-1 (s - tau lambda h),   q = -G^T l
//! ```
//!
//! Every system stays well posed at `tau = 0`, where `l = 0` when `s = 0`.
//! The optional node source `s` lets callers solve for an increment
//! `p - p0` by passing `s = H G p0`.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{norm2, norm_inf, CsrMatrix, SolveInfo, SpdSolver};
use crate::stencil_ops::{assemble_dh, extend_interior, BField};

/// Relative tolerance of every linear solve.
pub const SOLVER_TOL: f64 = 1e-12;

/// How the micro potential `l` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MicroForm {
    /// One node problem `(N + tau lambda H^-1) l = H^-1 (s - tau lambda h)`.
    #[default]
    Single,
    /// Two successive problems `(N + tau lambda) L = -tau G f`, `N l = L`.
    /// Only valid for `H = 1` and no source.
    TwoStage,
}

#[derive(Clone, Copy, Debug)]
pub struct AnisoDiffusionProblem<'a> {
    pub b: &'a BField,
    /// Coefficient on the full node numbering; `None` means `H = 1`.
    pub h_coeff: Option<&'a [f64]>,
    pub lambda: f64,
    pub tau: f64,
    pub f: &'a [f64],
    /// Interior-node flux source `s`.
    pub source: Option<&'a [f64]>,
}

impl AnisoDiffusionProblem<'_> {
    pub fn validate(&self, g: &Grid) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParam(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.f.len() != g.num_cells() {
            return Err(Error::InvalidParam("f must be a cell field".into()));
        }
        if let Some(h) = self.h_coeff {
            if h.len() != g.num_nodes() || h.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::InvalidParam("H must be a positive node field".into()));
            }
        }
        if let Some(s) = self.source {
            if s.len() != g.num_interior_nodes() {
                return Err(Error::InvalidParam("source must be an interior node field".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MicroMacroSolution {
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
    pub q: Vec<f64>,
    /// Auxiliary potentials on the full node numbering, zero on the boundary.
    pub h: Vec<f64>,
    pub l: Vec<f64>,
    pub iterations: usize,
    /// `|G pi|_inf`, the distance of `pi` to the discrete kernel.
    pub kernel_defect: f64,
}

/// Grid and field dependent operators, with cached factorizations.
#[derive(Clone, Debug)]
pub struct DiffusionOperators {
    pub g: CsrMatrix,
    pub gt: CsrMatrix,
    pub n: CsrMatrix,
    n_solver: SpdSolver,
    shifted: Option<(f64, SpdSolver)>,
}

impl DiffusionOperators {
    pub fn new(b: &BField, grid: &Grid) -> Self {
        let g = assemble_dh(b, grid);
        let gt = g.transpose();
        let n = g.matmul(&gt);
        let n_solver = SpdSolver::new(n.clone(), SOLVER_TOL);
        DiffusionOperators { g, gt, n, n_solver, shifted: None }
    }

    /// Solver for `N + shift I`, reused while the shift does not change.
    fn shifted_solver(&mut self, shift: f64) -> &SpdSolver {
        let stale = self.shifted.as_ref().is_none_or(|(s, _)| *s != shift);
        if stale {
            let m = self.n.add_scaled(shift, &CsrMatrix::identity(self.n.nrows));
            self.shifted = Some((shift, SpdSolver::new(m, SOLVER_TOL)));
        }
        &self.shifted.as_ref().expect("just filled").1
    }

    /// `A_H p + tau lambda p - tau f + G^T s`, the residual of the original
    /// cell equation.
    pub fn residual(&self, prob: &AnisoDiffusionProblem, grid: &Grid, p: &[f64]) -> Vec<f64> {
        let gp = self.g.matvec(p);
        let mut flux: Vec<f64> = match prob.h_coeff {
            Some(h) => gp
                .iter()
                .zip(grid.interior_nodes())
                .map(|(x, &v)| x * h[v])
                .collect(),
            None => gp,
        };
        if let Some(s) = prob.source {
            flux.iter_mut().zip(s).for_each(|(x, y)| *x += y);
        }
        let ap = self.gt.matvec(&flux);
        (0..p.len())
            .map(|c| ap[c] + prob.tau * prob.lambda * p[c] - prob.tau * prob.f[c])
            .collect()
    }
}

/// Micro-macro solve.
pub fn solve_micro_macro(
    ops: &mut DiffusionOperators,
    prob: &AnisoDiffusionProblem,
    grid: &Grid,
    form: MicroForm,
) -> Result<MicroMacroSolution> {
    prob.validate(grid)?;
    let (lam, tau) = (prob.lambda, prob.tau);
    let mut iterations = 0;
    let mut track = |i: SolveInfo| iterations += i.iterations;

    let gf = ops.g.matvec(prob.f);
    let rhs_h: Vec<f64> = gf.iter().map(|x| x / lam).collect();
    let (h, info) = ops.n_solver.solve(&rhs_h)?;
    track(info);
    let gth = ops.gt.matvec(&h);
    let pi: Vec<f64> = prob.f.iter().zip(&gth).map(|(f, x)| f / lam - x).collect();

    let l = match form {
        MicroForm::Single => {
            let hi: Option<Vec<f64>> = prob
                .h_coeff
                .map(|hc| grid.interior_nodes().iter().map(|&v| hc[v]).collect());
            let mut rhs: Vec<f64> = h.iter().map(|x| -tau * lam * x).collect();
            if let Some(s) = prob.source {
                rhs.iter_mut().zip(s).for_each(|(r, s)| *r += s);
            }
            match hi {
                None => {
                    let (l, info) = ops.shifted_solver(tau * lam).solve(&rhs)?;
                    track(info);
                    l
                }
                Some(hi) => {
                    let inv: Vec<f64> = hi.iter().map(|x| tau * lam / x).collect();
                    let m = ops.n.add_scaled(1.0, &CsrMatrix::diag(&inv));
                    rhs.iter_mut().zip(&hi).for_each(|(r, x)| *r /= x);
                    let (l, info) = SpdSolver::new(m, SOLVER_TOL).solve(&rhs)?;
                    track(info);
                    l
                }
            }
        }
        MicroForm::TwoStage => {
            if prob.source.is_some() || prob.h_coeff.is_some_and(|h| h.iter().any(|&x| x != 1.0)) {
                return Err(Error::InvalidParam("two-stage micro solve needs H = 1 and no source".into()));
            }
            let rhs: Vec<f64> = gf.iter().map(|x| -tau * x).collect();
            let (big_l, info) = ops.shifted_solver(tau * lam).solve(&rhs)?;
            track(info);
            let (l, info) = ops.n_solver.solve(&big_l)?;
            track(info);
            l
        }
    };
    let gtl = ops.gt.matvec(&l);
    let q: Vec<f64> = gtl.iter().map(|x| -x).collect();
    let p: Vec<f64> = pi.iter().zip(&q).map(|(a, b)| a + b).collect();

    let kernel_defect = norm_inf(&ops.g.matvec(&pi));
    let tol = 1e-8 * norm_inf(&pi) + 1e-12 * (1.0 + norm_inf(&rhs_h));
    if kernel_defect > tol {
        return Err(Error::KernelViolation { violation: kernel_defect, tol });
    }
    Ok(MicroMacroSolution {
        p,
        pi,
        q,
        h: extend_interior(&h, grid),
        l: extend_interior(&l, grid),
        iterations,
        kernel_defect,
    })
}

/// Direct solve of the assembled cell system `(A_H + tau lambda I) p = tau f`
/// (plus the source term). Only defined for `tau > 0`.
pub fn solve_direct(ops: &DiffusionOperators, prob: &AnisoDiffusionProblem, grid: &Grid) -> Result<Vec<f64>> {
    prob.validate(grid)?;
    if !(prob.tau > 0.0) {
        return Err(Error::InvalidParam("direct solve is singular at tau = 0".into()));
    }
    let hi: Vec<f64> = match prob.h_coeff {
        Some(h) => grid.interior_nodes().iter().map(|&v| h[v]).collect(),
        None => vec![1.0; grid.num_interior_nodes()],
    };
    let a = ops.gt.matmul(&ops.g.scale_rows(&hi));
    let m = a.add_scaled(prob.tau * prob.lambda, &CsrMatrix::identity(grid.num_cells()));
    let mut rhs: Vec<f64> = prob.f.iter().map(|x| prob.tau * x).collect();
    if let Some(s) = prob.source {
        let gts = ops.gt.matvec(s);
        rhs.iter_mut().zip(&gts).for_each(|(r, x)| *r -= x);
    }
    let (p, _) = SpdSolver::new(m, SOLVER_TOL).solve(&rhs)?;
    Ok(p)
}

/// `|dh p|_2` over interior nodes, with node-volume weights.
pub fn ap_limit_residual(p: &[f64], ops: &DiffusionOperators, grid: &Grid) -> f64 {
    norm2(&ops.g.matvec(p)) * grid.cell_vol().sqrt()
}
