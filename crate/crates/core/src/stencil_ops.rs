//! Three-point operators on the cell/node staggering.
//!
//! * `dh`: cell field to node field, `b · (averaged differences)`.
//! * `dhstar`: node field to cell field, divergence of `b w`.
//! * `grad_star`: cell field to node vector field, the same differences
//!   without the projection on `b`.
//!
//! The node stencils read cells outside the mesh as copies of the nearest
//! cell (zero-gradient ghosts), which only matters on boundary nodes. The
//! assembled `dh` matrix keeps interior-node rows only: on boundary nodes the
//! diffusion problems impose a vanishing flux instead. With unweighted sums
//! the interior `dh` matrix `G` and `dhstar` restricted to fields vanishing on
//! the boundary satisfy `dhstar = -G^T`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{dot, norm, Grid, NodeField, NodeVecField, Vec3};
use crate::linalg::CsrMatrix;

/// Unit field direction and magnitude at nodes and at cells.
#[derive(Clone, Debug)]
pub struct BField {
    pub node_b: Vec<Vec3>,
    pub node_mag: Vec<f64>,
    pub cell_b: Vec<Vec3>,
    pub cell_mag: Vec<f64>,
}

impl BField {
    /// Samples `field` at nodes and cell centers and normalizes it.
    pub fn from_fn(g: &Grid, field: impl Fn(Vec3) -> Vec3) -> Result<Self> {
        let split = |x: Vec3| -> Result<(Vec3, f64)> {
            let v = field(x);
            let m = norm(v);
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidField(format!("|B| = {m} at {x:?}")));
            }
            Ok(([v[0] / m, v[1] / m, v[2] / m], m))
        };
        let (node_b, node_mag) = g
            .node_coords()
            .into_iter()
            .map(split)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let (cell_b, cell_mag) = g
            .cell_centers()
            .into_iter()
            .map(split)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(BField { node_b, node_mag, cell_b, cell_mag })
    }

    pub fn uniform(g: &Grid, b: Vec3) -> Result<Self> {
        Self::from_fn(g, |_| b)
    }

    /// Checks `|b| = 1` and `|B| > 0` everywhere.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let bad = self
            .node_b
            .iter()
            .chain(&self.cell_b)
            .any(|b| (norm(*b) - 1.0).abs() > tol);
        let mag = self.node_mag.iter().chain(&self.cell_mag).all(|&m| m > 0.0);
        if bad || !mag {
            return Err(Error::InvalidField("b is not a unit field or |B| <= 0".into()));
        }
        Ok(())
    }
}

/// Averaged differences of `p` around node `v`, one entry per axis.
#[inline]
fn node_grad(p: &[f64], v: usize, g: &Grid) -> Vec3 {
    let mut gr = [0.0; 3];
    for cr in g.corners() {
        let pc = p[g.node_cell_clamped(v, cr)];
        for (a, ga) in gr.iter_mut().enumerate().take(g.dim()) {
            *ga += cr.sign(a) * pc;
        }
    }
    for (a, ga) in gr.iter_mut().enumerate().take(g.dim()) {
        *ga /= g.stencil_den(a);
    }
    gr
}

/// Discrete gradient at every node.
pub fn apply_grad_star(p: &[f64], g: &Grid) -> NodeVecField {
    assert_eq!(p.len(), g.num_cells());
    (0..g.num_nodes()).into_par_iter().map(|v| node_grad(p, v, g)).collect()
}

/// Directional derivative along `b` at every node.
pub fn apply_dh(p: &[f64], b: &BField, g: &Grid) -> NodeField {
    assert_eq!(p.len(), g.num_cells());
    (0..g.num_nodes())
        .into_par_iter()
        .map(|v| dot(b.node_b[v], node_grad(p, v, g)))
        .collect()
}

/// Divergence of `b w` at every cell.
pub fn apply_dhstar(w: &[f64], b: &BField, g: &Grid) -> Vec<f64> {
    assert_eq!(w.len(), g.num_nodes());
    let den: Vec<f64> = (0..3).map(|a| if a < g.dim() { g.stencil_den(a) } else { 1.0 }).collect();
    (0..g.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut s = 0.0;
            for cr in g.corners() {
                let v = g.cell_node(c, cr);
                let bv = b.node_b[v];
                for a in 0..g.dim() {
                    s += cr.sign(a) * bv[a] * w[v] / den[a];
                }
            }
            s
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// `dh` restricted to interior nodes: `|I*| x |I|`.
    Dh,
    /// `dhstar` acting on interior-node fields: `|I| x |I*|`.
    DhStar,
    /// `A_c = -dhstar(c dh .)` with zero flux on boundary nodes: `|I| x |I|`.
    CellDiffusion,
    /// `N_c = -c dh(dhstar .)` on interior nodes, zero on boundary nodes.
    NodeDiffusion,
}

/// Assembles `kind`. `coeff` is a node field (full node numbering) used by
/// the two diffusion kinds; it must be positive on interior nodes.
pub fn assemble_operator(kind: OperatorKind, b: &BField, coeff: Option<&[f64]>, g: &Grid) -> Result<CsrMatrix> {
    let gm = assemble_dh(b, g);
    let coef_int = |coeff: Option<&[f64]>| -> Result<Vec<f64>> {
        let c = coeff.ok_or_else(|| Error::InvalidParam("diffusion operator needs a coefficient".into()))?;
        if c.len() != g.num_nodes() {
            return Err(Error::InvalidParam("coefficient must be a node field".into()));
        }
        let ci: Vec<f64> = g.interior_nodes().iter().map(|&v| c[v]).collect();
        if let Some(x) = ci.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::InvalidParam(format!("non-positive diffusion coefficient {x}")));
        }
        Ok(ci)
    };
    Ok(match kind {
        OperatorKind::Dh => gm,
        OperatorKind::DhStar => scaled(&gm.transpose(), -1.0),
        OperatorKind::CellDiffusion => {
            let ci = coef_int(coeff)?;
            gm.transpose().matmul(&gm.scale_rows(&ci))
        }
        OperatorKind::NodeDiffusion => {
            let ci = coef_int(coeff)?;
            gm.matmul(&gm.transpose()).scale_rows(&ci)
        }
    })
}

fn scaled(m: &CsrMatrix, s: f64) -> CsrMatrix {
    let mut m = m.clone();
    m.data.iter_mut().for_each(|v| *v *= s);
    m
}

/// Interior-node `dh` matrix.
pub fn assemble_dh(b: &BField, g: &Grid) -> CsrMatrix {
    let mut trip = Vec::with_capacity(g.num_interior_nodes() * g.corners().len());
    for (row, &v) in g.interior_nodes().iter().enumerate() {
        let bv = b.node_b[v];
        for cr in g.corners() {
            let c = g.node_cell(v, cr).expect("interior node has all neighbour cells");
            let w: f64 = (0..g.dim()).map(|a| cr.sign(a) * bv[a] / g.stencil_den(a)).sum();
            trip.push((row, c, w));
        }
    }
    CsrMatrix::from_triplets(g.num_interior_nodes(), g.num_cells(), &trip)
}

/// Gathers the interior entries of a node field.
pub fn restrict_interior(w: &[f64], g: &Grid) -> Vec<f64> {
    g.interior_nodes().iter().map(|&v| w[v]).collect()
}

/// Scatters interior values into a node field that vanishes on the boundary.
pub fn extend_interior(wi: &[f64], g: &Grid) -> NodeField {
    let mut w = vec![0.0; g.num_nodes()];
    for (k, &v) in g.interior_nodes().iter().enumerate() {
        w[v] = wi[k];
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::linalg::norm2;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> Grid {
        Grid::new(GridSpec::square(1.0, 2.0, n)).unwrap()
    }

    fn circ(g: &Grid) -> BField {
        BField::from_fn(g, |x| [x[1], -x[0], 0.0]).unwrap()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / (1u64 << 53) as f64 - 0.5
    }

    #[test]
    fn constants_are_annihilated() {
        let g = grid(6);
        let b = circ(&g);
        let p = vec![3.7; g.num_cells()];
        assert!(apply_dh(&p, &b, &g).iter().all(|&x| x == 0.0));
        assert!(apply_grad_star(&p, &g).iter().all(|x| *x == [0.0; 3]));
    }

    #[test]
    fn affine_derivatives() {
        let g = grid(8);
        let bx = BField::uniform(&g, [1.0, 0.0, 0.0]).unwrap();
        let by = BField::uniform(&g, [0.0, 1.0, 0.0]).unwrap();
        let px: Vec<f64> = g.cell_centers().iter().map(|x| x[0]).collect();
        let pxy: Vec<f64> = g.cell_centers().iter().map(|x| x[0] + 2.0 * x[1]).collect();
        let d1 = apply_dh(&px, &bx, &g);
        let d2 = apply_dh(&pxy, &by, &g);
        let gs = apply_grad_star(&px, &g);
        for &v in g.interior_nodes() {
            assert_relative_eq!(d1[v], 1.0, epsilon = 1e-12);
            assert_relative_eq!(d2[v], 2.0, epsilon = 1e-12);
            assert_relative_eq!(gs[v][0], 1.0, epsilon = 1e-12);
            assert_eq!(gs[v][1], 0.0);
        }
    }

    #[test]
    fn dhstar_of_linear_node_field() {
        let g = grid(8);
        let b = BField::uniform(&g, [1.0, 0.0, 0.0]).unwrap();
        assert!(apply_dhstar(&vec![0.0; g.num_nodes()], &b, &g).iter().all(|&x| x == 0.0));
        let w: Vec<f64> = g.node_coords().iter().map(|x| x[0]).collect();
        for v in apply_dhstar(&w, &b, &g) {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dh_is_b_dot_grad_star() {
        let g = grid(7);
        let b = circ(&g);
        let mut s = 7;
        let p: Vec<f64> = (0..g.num_cells()).map(|_| lcg(&mut s)).collect();
        let d = apply_dh(&p, &b, &g);
        let gs = apply_grad_star(&p, &g);
        for v in 0..g.num_nodes() {
            assert_relative_eq!(d[v], dot(b.node_b[v], gs[v]), epsilon = 1e-13);
        }
    }

    #[test]
    fn summation_by_parts_matrices() {
        let g = grid(9);
        let b = circ(&g);
        let gm = assemble_operator(OperatorKind::Dh, &b, None, &g).unwrap();
        let dm = assemble_operator(OperatorKind::DhStar, &b, None, &g).unwrap();
        let mut s = 11;
        let wi: Vec<f64> = (0..g.num_interior_nodes()).map(|_| lcg(&mut s)).collect();
        let w = extend_interior(&wi, &g);
        let free = apply_dhstar(&w, &b, &g);
        let assembled = dm.matvec(&wi);
        for c in 0..g.num_cells() {
            assert_relative_eq!(free[c], assembled[c], epsilon = 1e-12);
        }
        let gt = gm.transpose();
        let diff = gt.add_scaled(1.0, &dm);
        assert!(diff.frobenius() <= 1e-13 * gm.frobenius());
    }

    #[test]
    fn diffusion_matrices() {
        let g = grid(6);
        let b = circ(&g);
        let c: Vec<f64> = g.node_coords().iter().map(|x| 1.0 + x[0] * x[1]).collect();
        let a = assemble_operator(OperatorKind::CellDiffusion, &b, Some(&c), &g).unwrap();
        assert!(norm2(&a.matvec(&vec![1.0; g.num_cells()])) < 1e-12);
        let at = a.transpose();
        assert!(a.add_scaled(-1.0, &at).frobenius() <= 1e-12 * a.frobenius());
        let n = assemble_operator(OperatorKind::NodeDiffusion, &b, Some(&c), &g).unwrap();
        assert_eq!(n.nrows, g.num_interior_nodes());
        let mut bad = c.clone();
        bad[g.interior_nodes()[0]] = 0.0;
        assert!(assemble_operator(OperatorKind::CellDiffusion, &b, Some(&bad), &g).is_err());
    }

    #[test]
    fn three_dimensional_sbp() {
        let g = Grid::new(GridSpec::new_3d([0.0; 3], [1.0, 2.0, 1.5], [3, 4, 3])).unwrap();
        let b = BField::from_fn(&g, |x| [1.0 + x[2], x[0], 0.5 + x[1]]).unwrap();
        let gm = assemble_dh(&b, &g);
        let mut s = 3;
        let p: Vec<f64> = (0..g.num_cells()).map(|_| lcg(&mut s)).collect();
        let free = apply_dh(&p, &b, &g);
        let mat = gm.matvec(&p);
        for (k, &v) in g.interior_nodes().iter().enumerate() {
            assert_relative_eq!(free[v], mat[k], epsilon = 1e-12);
        }
        let wi: Vec<f64> = (0..g.num_interior_nodes()).map(|_| lcg(&mut s)).collect();
        let lhs = linalg_dot(&apply_dhstar(&extend_interior(&wi, &g), &b, &g), &p);
        let rhs = linalg_dot(&wi, &mat);
        assert!((lhs + rhs).abs() <= 1e-12 * norm2(&wi) * norm2(&p));
    }

    fn linalg_dot(a: &[f64], b: &[f64]) -> f64 {
        crate::linalg::dot(a, b)
    }
}
