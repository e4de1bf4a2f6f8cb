//! Manufactured-solution validation of the anisotropic diffusion solver.
//!
//! On `[1, 2]^2` the exact solution is `p = p0 + tau p1` with `p0 = 2` and
//! `p1 = ((x-1)(2-x)(y-1)(2-y))^3`, for `lambda = 1`,
//! `H = 1 + sin^2 x sin^2 y` and `b = (y, -x) / r`. The source is
//! `f = lambda p - div(H (b ⊗ b) grad p1)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::ap_diffusion::{solve_direct, solve_micro_macro, AnisoDiffusionProblem, DiffusionOperators, MicroForm};
use crate::error::Result;
use crate::grid::{discrete_norms, Grid, GridSpec, Norms, Vec3};
use crate::linalg::norm2;
use crate::stencil_ops::BField;

use super::config::DiffusionConfig;

pub const P0: f64 = 2.0;
pub const LAMBDA: f64 = 1.0;

pub fn p1(x: f64, y: f64) -> f64 {
    ((x - 1.0) * (2.0 - x) * (y - 1.0) * (2.0 - y)).powi(3)
}

fn grad_p1(x: f64, y: f64) -> [f64; 2] {
    let (u, v) = ((x - 1.0) * (2.0 - x), (y - 1.0) * (2.0 - y));
    let g = 3.0 * (u * v).powi(2);
    [g * (3.0 - 2.0 * x) * v, g * u * (3.0 - 2.0 * y)]
}

pub fn h_coeff(x: f64, y: f64) -> f64 {
    1.0 + (x.sin() * y.sin()).powi(2)
}

pub fn b_dir(x: Vec3) -> Vec3 {
    let r = x[0].hypot(x[1]);
    [x[1] / r, -x[0] / r, 0.0]
}

/// Flux `H (b · grad p1) b` in the plane.
fn flux(x: f64, y: f64) -> [f64; 2] {
    let b = b_dir([x, y, 0.0]);
    let g = grad_p1(x, y);
    let s = h_coeff(x, y) * (b[0] * g[0] + b[1] * g[1]);
    [s * b[0], s * b[1]]
}

/// Fourth-order central difference of `f` at `t` with step `d`.
pub fn fd4(f: impl Fn(f64) -> f64, t: f64, d: f64) -> f64 {
    (-f(t + 2.0 * d) + 8.0 * f(t + d) - 8.0 * f(t - d) + f(t - 2.0 * d)) / (12.0 * d)
}

/// Divergence of the manufactured flux by finite differences.
pub fn flux_divergence(x: f64, y: f64, d: f64) -> f64 {
    fd4(|t| flux(t, y)[0], x, d) + fd4(|t| flux(x, t)[1], y, d)
}

/// Data of the manufactured problem on one grid.
pub struct Manufactured {
    pub grid: Grid,
    pub b: BField,
    pub h_nodes: Vec<f64>,
    pub p1_cells: Vec<f64>,
    pub div_cells: Vec<f64>,
}

impl Manufactured {
    pub fn new(cells: usize, fd_step: f64) -> Result<Self> {
        let grid = Grid::new(GridSpec::square(1.0, 2.0, cells))?;
        let b = BField::from_fn(&grid, b_dir)?;
        let h_nodes = grid.node_coords().iter().map(|x| h_coeff(x[0], x[1])).collect();
        let centers = grid.cell_centers();
        let p1_cells = centers.iter().map(|x| p1(x[0], x[1])).collect();
        let div_cells = centers.iter().map(|x| flux_divergence(x[0], x[1], fd_step)).collect();
        Ok(Manufactured { grid, b, h_nodes, p1_cells, div_cells })
    }

    pub fn exact(&self, tau: f64) -> Vec<f64> {
        self.p1_cells.iter().map(|p| P0 + tau * p).collect()
    }

    pub fn source(&self, tau: f64) -> Vec<f64> {
        self.exact(tau)
            .iter()
            .zip(&self.div_cells)
            .map(|(p, d)| LAMBDA * p - d)
            .collect()
    }

    pub fn problem<'a>(&'a self, tau: f64, f: &'a [f64]) -> AnisoDiffusionProblem<'a> {
        AnisoDiffusionProblem { b: &self.b, h_coeff: Some(&self.h_nodes), lambda: LAMBDA, tau, f, source: None }
    }

    pub fn solve(&self, ops: &mut DiffusionOperators, tau: f64) -> Result<Vec<f64>> {
        let f = self.source(tau);
        Ok(solve_micro_macro(ops, &self.problem(tau, &f), &self.grid, MicroForm::Single)?.p)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub x: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    /// `h` or `tau`.
    pub axis: String,
    pub label: String,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of `log10(error)` against `log10(x)`: L1, L2, Linf.
    pub slopes: [f64; 3],
}

/// Least-squares slope of `log10 y` against `log10 x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

impl ConvergenceTable {
    pub fn new(axis: &str, label: String, rows: Vec<ConvergenceRow>) -> Self {
        let x: Vec<f64> = rows.iter().map(|r| r.x).collect();
        let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let slopes = [
            loglog_slope(&x, &col(|r| r.l1)),
            loglog_slope(&x, &col(|r| r.l2)),
            loglog_slope(&x, &col(|r| r.linf)),
        ];
        ConvergenceTable { axis: axis.into(), label, rows, slopes }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},l1,l2,linf", self.axis)?;
        for r in &self.rows {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", r.x, r.l1, r.l2, r.linf)?;
        }
        writeln!(w, "slope,{:.16e},{:.16e},{:.16e}", self.slopes[0], self.slopes[1], self.slopes[2])
    }
}

fn row(x: f64, n: Norms) -> ConvergenceRow {
    ConvergenceRow { x, l1: n.l1, l2: n.l2, linf: n.linf }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Errors `|p_app - p|` over a grid ladder at fixed `tau`.
pub fn h_sweep(grids: &[usize], tau: f64, fd_step: f64) -> Result<ConvergenceTable> {
    let rows: Result<Vec<ConvergenceRow>> = grids
        .par_iter()
        .map(|&n| {
            let m = Manufactured::new(n, fd_step)?;
            let mut ops = DiffusionOperators::new(&m.b, &m.grid);
            let p = m.solve(&mut ops, tau)?;
            Ok(row(m.grid.h(), discrete_norms(&diff(&p, &m.exact(tau)), &m.grid)))
        })
        .collect();
    Ok(ConvergenceTable::new("h", format!("tau={tau:e}"), rows?))
}

/// Errors `|p_app - p0|` over a range of `tau` on one grid.
pub fn tau_sweep(cells: usize, taus: &[f64], fd_step: f64) -> Result<ConvergenceTable> {
    let m = Manufactured::new(cells, fd_step)?;
    let ops = DiffusionOperators::new(&m.b, &m.grid);
    let rows: Result<Vec<ConvergenceRow>> = taus
        .par_iter()
        .map(|&tau| {
            let mut ops = ops.clone();
            let p = m.solve(&mut ops, tau)?;
            let e: Vec<f64> = p.iter().map(|x| x - P0).collect();
            Ok(row(tau, discrete_norms(&e, &m.grid)))
        })
        .collect();
    Ok(ConvergenceTable::new("tau", format!("cells={cells}"), rows?))
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleCheck {
    pub tau: f64,
    /// `|p_mm - p_direct|_2 / |p_direct|_2`.
    pub rel_l2: f64,
}

/// Micro-macro against the assembled direct solve.
pub fn oracle_checks(cells: usize, taus: &[f64], fd_step: f64) -> Result<Vec<OracleCheck>> {
    let m = Manufactured::new(cells, fd_step)?;
    let mut ops = DiffusionOperators::new(&m.b, &m.grid);
    taus.iter()
        .map(|&tau| {
            let p = m.solve(&mut ops, tau)?;
            let f = m.source(tau);
            let d = solve_direct(&ops, &m.problem(tau, &f), &m.grid)?;
            Ok(OracleCheck { tau, rel_l2: norm2(&diff(&p, &d)) / norm2(&d) })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffusionReport {
    pub h_tables: Vec<ConvergenceTable>,
    pub tau_table: ConvergenceTable,
    pub oracle: Vec<OracleCheck>,
}

pub fn run_diffusion_validation(cfg: &DiffusionConfig) -> Result<DiffusionReport> {
    let h_tables = cfg
        .h_taus
        .iter()
        .map(|&tau| h_sweep(&cfg.grids, tau, cfg.fd_step))
        .collect::<Result<Vec<_>>>()?;
    let tau_table = tau_sweep(cfg.sweep_cells, &cfg.tau_sweep, cfg.fd_step)?;
    let oracle = oracle_checks(cfg.oracle_cells, &cfg.oracle_taus, cfg.fd_step)?;
    Ok(DiffusionReport { h_tables, tau_table, oracle })
}
