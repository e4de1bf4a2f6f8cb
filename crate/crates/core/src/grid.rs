//! Uniform structured mesh with cell-centered and node-centered fields.
//!
//! Cells are indexed `(i, j, k)` with `i in 0..nx`. Node `i` sits on the lower
//! face of cell `i`, so it lies between cells `i - 1` and `i`. In 2D the z axis
//! is inert: there is one layer of cells with unit thickness and one layer of
//! nodes, and vectors keep three components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type CellField = Vec<f64>;
pub type CellVecField = Vec<Vec3>;
pub type NodeField = Vec<f64>;
pub type NodeVecField = Vec<Vec3>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub lo: Vec3,
    pub hi: Vec3,
    pub cells: [usize; 3],
}

impl GridSpec {
    pub fn new_2d(xlim: (f64, f64), ylim: (f64, f64), nx: usize, ny: usize) -> Self {
        GridSpec {
            dim: 2,
            lo: [xlim.0, ylim.0, 0.0],
            hi: [xlim.1, ylim.1, 1.0],
            cells: [nx, ny, 1],
        }
    }

    pub fn new_3d(lo: Vec3, hi: Vec3, cells: [usize; 3]) -> Self {
        GridSpec { dim: 3, lo, hi, cells }
    }

    /// Square 2D domain `[a, b]^2` with `n` cells per side.
    pub fn square(a: f64, b: f64, n: usize) -> Self {
        Self::new_2d((a, b), (a, b), n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        for a in 0..self.dim {
            if self.cells[a] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} needs at least 2 cells, got {}",
                    self.cells[a]
                )));
            }
            let ext = self.hi[a] - self.lo[a];
            if !(ext > 0.0) || !ext.is_finite() {
                return Err(Error::InvalidGrid(format!("axis {a} has non-positive extent {ext}")));
            }
        }
        Ok(())
    }
}

/// One of the `2^dim` cells around a node, or corners of a cell.
///
/// `side[a]` is 1 on the upper side of axis `a` and 0 on the lower side.
#[derive(Clone, Copy, Debug)]
pub struct Corner {
    pub side: [u8; 3],
}

impl Corner {
    /// +1 on the upper side of `axis`, -1 on the lower side.
    #[inline]
    pub fn sign(&self, axis: usize) -> f64 {
        if self.side[axis] == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub spec: GridSpec,
    /// Cells per axis (1 on the inert z axis in 2D).
    pub n: [usize; 3],
    /// Nodes per axis (`n + 1` on active axes, 1 on the inert axis).
    pub nn: [usize; 3],
    /// Mesh steps; unit thickness on the inert axis.
    pub d: Vec3,
    corners: Vec<Corner>,
    interior: Vec<usize>,
    interior_pos: Vec<Option<usize>>,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let dim = spec.dim;
        let mut n = [1usize; 3];
        let mut nn = [1usize; 3];
        let mut d = [1.0; 3];
        for a in 0..dim {
            n[a] = spec.cells[a];
            nn[a] = spec.cells[a] + 1;
            d[a] = (spec.hi[a] - spec.lo[a]) / spec.cells[a] as f64;
        }
        let corners = (0..1usize << dim)
            .map(|m| {
                let mut side = [0u8; 3];
                for (a, s) in side.iter_mut().enumerate().take(dim) {
                    *s = ((m >> a) & 1) as u8;
                }
                Corner { side }
            })
            .collect();
        let mut g = Grid {
            spec,
            n,
            nn,
            d,
            corners,
            interior: Vec::new(),
            interior_pos: Vec::new(),
        };
        let mut pos = vec![None; g.num_nodes()];
        for node in 0..g.num_nodes() {
            if !g.is_boundary_node(node) {
                pos[node] = Some(g.interior.len());
                g.interior.push(node);
            }
        }
        g.interior_pos = pos;
        Ok(g)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.nn[0] * self.nn[1] * self.nn[2]
    }

    pub fn num_interior_nodes(&self) -> usize {
        self.interior.len()
    }

    /// Node indices of `I*`, in increasing order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Position of a node in the interior numbering, if interior.
    #[inline]
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_pos[node]
    }

    /// The `2^dim` corner patterns.
    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    /// Denominator of the averaged difference along `axis`: `2^(dim-1) * d[axis]`.
    #[inline]
    pub fn stencil_den(&self, axis: usize) -> f64 {
        (1usize << (self.dim() - 1)) as f64 * self.d[axis]
    }

    pub fn cell_vol(&self) -> f64 {
        self.d[0] * self.d[1] * self.d[2]
    }

    /// Smallest active mesh step.
    pub fn h(&self) -> f64 {
        (0..self.dim()).map(|a| self.d[a]).fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n[1] + j) * self.n[0] + i
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.nn[1] + j) * self.nn[0] + i
    }

    #[inline]
    pub fn cell_ijk(&self, c: usize) -> [usize; 3] {
        let i = c % self.n[0];
        let r = c / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    #[inline]
    pub fn node_ijk(&self, v: usize) -> [usize; 3] {
        let i = v % self.nn[0];
        let r = v / self.nn[0];
        [i, r % self.nn[1], r / self.nn[1]]
    }

    pub fn cell_center(&self, c: usize) -> Vec3 {
        let ijk = self.cell_ijk(c);
        let mut x = [0.0; 3];
        for a in 0..3 {
            x[a] = self.spec.lo[a] + (ijk[a] as f64 + 0.5) * self.d[a];
        }
        if self.dim() == 2 {
            x[2] = 0.0;
        }
        x
    }

    /// Node coordinate; node `(i, j, k)` is the lower corner of cell `(i, j, k)`.
    pub fn node_coord(&self, v: usize) -> Vec3 {
        let ijk = self.node_ijk(v);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = self.spec.lo[a] + ijk[a] as f64 * self.d[a];
        }
        x
    }

    pub fn is_boundary_node(&self, v: usize) -> bool {
        let ijk = self.node_ijk(v);
        (0..self.dim()).any(|a| ijk[a] == 0 || ijk[a] == self.n[a])
    }

    pub fn cell_centers(&self) -> Vec<Vec3> {
        (0..self.num_cells()).map(|c| self.cell_center(c)).collect()
    }

    pub fn node_coords(&self) -> Vec<Vec3> {
        (0..self.num_nodes()).map(|v| self.node_coord(v)).collect()
    }

    /// Cell adjacent to node `v` on the given corner side, if it exists.
    #[inline]
    pub fn node_cell(&self, v: usize, corner: &Corner) -> Option<usize> {
        let ijk = self.node_ijk(v);
        let mut c = [0usize; 3];
        for a in 0..3 {
            if a >= self.dim() {
                c[a] = 0;
                continue;
            }
            let idx = ijk[a] as isize - 1 + corner.side[a] as isize;
            if idx < 0 || idx >= self.n[a] as isize {
                return None;
            }
            c[a] = idx as usize;
        }
        Some(self.cell_index(c[0], c[1], c[2]))
    }

    /// Cell adjacent to node `v`, with out-of-range indices clamped to the
    /// nearest cell (zero-gradient ghost cells).
    #[inline]
    pub fn node_cell_clamped(&self, v: usize, corner: &Corner) -> usize {
        let ijk = self.node_ijk(v);
        let mut c = [0usize; 3];
        for a in 0..self.dim() {
            let idx = ijk[a] as isize - 1 + corner.side[a] as isize;
            c[a] = idx.clamp(0, self.n[a] as isize - 1) as usize;
        }
        self.cell_index(c[0], c[1], c[2])
    }

    /// Corner node of cell `c` on the given side.
    #[inline]
    pub fn cell_node(&self, c: usize, corner: &Corner) -> usize {
        let ijk = self.cell_ijk(c);
        let mut v = [0usize; 3];
        for a in 0..self.dim() {
            v[a] = ijk[a] + corner.side[a] as usize;
        }
        self.node_index(v[0], v[1], v[2])
    }

    /// Range of cells in the band of width `w` along the boundary, as a mask.
    pub fn boundary_band(&self, w: usize) -> Vec<bool> {
        (0..self.num_cells())
            .map(|c| {
                let ijk = self.cell_ijk(c);
                (0..self.dim()).any(|a| ijk[a] < w || ijk[a] + w >= self.n[a])
            })
            .collect()
    }
}

/// Average of cell values onto nodes.
///
/// Interior nodes take the mean of their `2^dim` cells; boundary nodes take
/// the mean of the cells that exist.
pub fn node_average(u: &[f64], g: &Grid) -> NodeField {
    assert_eq!(u.len(), g.num_cells(), "cell field size mismatch");
    (0..g.num_nodes())
        .map(|v| {
            let (mut s, mut m) = (0.0, 0usize);
            for cr in g.corners() {
                if let Some(c) = g.node_cell(v, cr) {
                    s += u[c];
                    m += 1;
                }
            }
            s / m as f64
        })
        .collect()
}

/// Mean of the corner node values of every cell.
pub fn cell_from_nodes(w: &[f64], g: &Grid) -> CellField {
    assert_eq!(w.len(), g.num_nodes(), "node field size mismatch");
    let inv = 1.0 / g.corners().len() as f64;
    (0..g.num_cells())
        .map(|c| g.corners().iter().map(|cr| w[g.cell_node(c, cr)]).sum::<f64>() * inv)
        .collect()
}

/// Vector version of [`cell_from_nodes`].
pub fn cell_from_nodes_vec(w: &[Vec3], g: &Grid) -> CellVecField {
    assert_eq!(w.len(), g.num_nodes(), "node field size mismatch");
    let inv = 1.0 / g.corners().len() as f64;
    (0..g.num_cells())
        .map(|c| {
            let mut s = [0.0; 3];
            for cr in g.corners() {
                let x = w[g.cell_node(c, cr)];
                for a in 0..3 {
                    s[a] += x[a];
                }
            }
            [s[0] * inv, s[1] * inv, s[2] * inv]
        })
        .collect()
}

fn coord_header(g: &Grid) -> &'static str {
    if g.dim() == 2 {
        "x,y"
    } else {
        "x,y,z"
    }
}

fn write_coords<W: std::io::Write>(w: &mut W, x: Vec3, dim: usize) -> std::io::Result<()> {
    for a in 0..dim {
        write!(w, "{:.16e},", x[a])?;
    }
    Ok(())
}

/// Writes a cell field as CSV rows `x,y,value` in cell index order, with
/// 17 significant digits.
pub fn write_scalar_csv<W: std::io::Write>(mut w: W, u: &[f64], g: &Grid) -> std::io::Result<()> {
    writeln!(w, "{},value", coord_header(g))?;
    for (c, x) in u.iter().enumerate() {
        write_coords(&mut w, g.cell_center(c), g.dim())?;
        writeln!(w, "{x:.16e}")?;
    }
    Ok(())
}

/// Vector version of [`write_scalar_csv`] with columns `vx,vy,vz`.
pub fn write_vector_csv<W: std::io::Write>(mut w: W, u: &[Vec3], g: &Grid) -> std::io::Result<()> {
    writeln!(w, "{},vx,vy,vz", coord_header(g))?;
    for (c, v) in u.iter().enumerate() {
        write_coords(&mut w, g.cell_center(c), g.dim())?;
        writeln!(w, "{:.16e},{:.16e},{:.16e}", v[0], v[1], v[2])?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Discrete L1, L2 (volume weighted) and max norms of a cell field.
pub fn discrete_norms(u: &[f64], g: &Grid) -> Norms {
    let vol = g.cell_vol();
    let mut n = Norms { l1: 0.0, l2: 0.0, linf: 0.0 };
    for &x in u {
        n.l1 += x.abs();
        n.l2 += x * x;
        n.linf = n.linf.max(x.abs());
    }
    n.l1 *= vol;
    n.l2 = (n.l2 * vol).sqrt();
    n
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Parallel part `(b ⊗ b) v`.
#[inline]
pub fn par(b: Vec3, v: Vec3) -> Vec3 {
    scale(dot(b, v), b)
}

/// Perpendicular part `(I - b ⊗ b) v`.
#[inline]
pub fn perp(b: Vec3, v: Vec3) -> Vec3 {
    sub(v, par(b, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sq(n: usize) -> Grid {
        Grid::new(GridSpec::square(1.0, 2.0, n)).unwrap()
    }

    #[test]
    fn counts_smallest_2d() {
        let g = sq(2);
        assert_eq!(g.num_cells(), 4);
        assert_eq!(g.num_nodes(), 9);
        assert_eq!(g.num_interior_nodes(), 1);
    }

    #[test]
    fn counts_100() {
        let g = sq(100);
        assert_relative_eq!(g.d[0], 0.01, epsilon = 1e-15);
        assert_relative_eq!(g.d[1], 0.01, epsilon = 1e-15);
        assert_eq!(g.num_cells(), 10_000);
    }

    #[test]
    fn counts_3d() {
        let g = Grid::new(GridSpec::new_3d([0.0; 3], [1.0; 3], [4, 4, 4])).unwrap();
        assert_eq!(g.num_nodes(), 125);
        assert_eq!(g.num_interior_nodes(), 27);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Grid::new(GridSpec::square(1.0, 2.0, 1)).is_err());
        assert!(Grid::new(GridSpec::square(2.0, 1.0, 4)).is_err());
    }

    #[test]
    fn interior_node_has_full_neighbourhood() {
        let g = sq(5);
        for &v in g.interior_nodes() {
            assert!(g.corners().iter().all(|c| g.node_cell(v, c).is_some()));
        }
        for v in 0..g.num_nodes() {
            if g.is_boundary_node(v) {
                assert!(g.corners().iter().any(|c| g.node_cell(v, c).is_none()));
            }
        }
    }

    #[test]
    fn node_is_cell_plus_half_step() {
        let g = sq(4);
        let c = g.cell_index(1, 2, 0);
        let v = g.node_index(2, 3, 0);
        let xc = g.cell_center(c);
        let xv = g.node_coord(v);
        assert_relative_eq!(xv[0], xc[0] + g.d[0] / 2.0, epsilon = 1e-14);
        assert_relative_eq!(xv[1], xc[1] + g.d[1] / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn center_node_average() {
        let g = sq(2);
        let u = vec![1.0, 2.0, 3.0, 4.0];
        let w = node_average(&u, &g);
        assert_relative_eq!(w[g.node_index(1, 1, 0)], 2.5);
    }

    #[test]
    fn averages_are_exact_for_affine_fields() {
        let g = sq(7);
        let u: Vec<f64> = g.cell_centers().iter().map(|x| 3.0 * x[0] - x[1] + 0.5).collect();
        let w = node_average(&u, &g);
        for &v in g.interior_nodes() {
            let x = g.node_coord(v);
            assert_relative_eq!(w[v], 3.0 * x[0] - x[1] + 0.5, epsilon = 1e-13);
        }
        let wn: Vec<f64> = g.node_coords().iter().map(|x| x[0]).collect();
        let back = cell_from_nodes(&wn, &g);
        for (c, x) in g.cell_centers().iter().enumerate() {
            assert_relative_eq!(back[c], x[0], epsilon = 1e-13);
        }
    }

    #[test]
    fn single_node_spreads_quarter() {
        let g = sq(3);
        let mut w = vec![0.0; g.num_nodes()];
        let v = g.node_index(1, 1, 0);
        w[v] = 1.0;
        let u = cell_from_nodes(&w, &g);
        let touched: Vec<usize> = (0..g.num_cells()).filter(|&c| u[c] != 0.0).collect();
        assert_eq!(touched.len(), 4);
        for c in touched {
            assert_relative_eq!(u[c], 0.25);
        }
    }

    #[test]
    fn norms() {
        let g = sq(10);
        let n = discrete_norms(&vec![1.0; 100], &g);
        assert_relative_eq!(n.l1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(n.l2, 1.0, epsilon = 1e-14);
        assert_relative_eq!(n.linf, 1.0);
        let z = discrete_norms(&vec![0.0; 100], &g);
        assert_eq!((z.l1, z.l2, z.linf), (0.0, 0.0, 0.0));
        let g = sq(100);
        let mut u = vec![0.0; g.num_cells()];
        u[1234] = 3.0;
        assert_relative_eq!(discrete_norms(&u, &g).l1, 3.0e-4, epsilon = 1e-18);
    }

    #[test]
    fn csv_round_trips_full_precision() {
        let g = Grid::new(GridSpec::square(0.0, 1.0, 2)).unwrap();
        let u = vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0];
        let mut buf = Vec::new();
        write_scalar_csv(&mut buf, &u, &g).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,value"));
        for (line, want) in lines.zip(&u) {
            let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert_eq!(v, *want);
        }
        let mut buf = Vec::new();
        write_vector_csv(&mut buf, &[[1.0, 2.0, 3.0]; 4], &g).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,y,vx,vy,vz\n2.5000000000000000e-1,"));
    }
}
