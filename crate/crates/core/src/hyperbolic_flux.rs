//! Rusanov finite volumes for the explicit hydrodynamic fluxes.
//!
//! The conserved block of one species is `W = (n, q)`. Its explicit flux
//! along axis `a` is `(e_a · (I - b b) q, q_a q / n)`. Ghost cells copy the
//! adjacent interior cell.

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::grid::{perp, Grid, Vec3};

pub type Flux4 = [f64; 4];

/// Explicit flux of one cell along `axis`.
#[inline]
pub fn explicit_flux_vector(n: f64, q: Vec3, b: Vec3, axis: usize) -> Flux4 {
    let qp = perp(b, q);
    let s = q[axis] / n;
    [qp[axis], s * q[0], s * q[1], s * q[2]]
}

/// Jacobian of [`explicit_flux_vector`] with respect to `(n, q)`.
pub fn jacobian(n: f64, q: Vec3, b: Vec3, axis: usize) -> Matrix4<f64> {
    let u = [q[0] / n, q[1] / n, q[2] / n];
    let ua = u[axis];
    let mut j = Matrix4::zeros();
    for k in 0..3 {
        let delta = if axis == k { 1.0 } else { 0.0 };
        j[(0, k + 1)] = delta - b[axis] * b[k];
    }
    for i in 0..3 {
        j[(i + 1, 0)] = -ua * u[i];
        for k in 0..3 {
            let mut v = 0.0;
            if k == axis {
                v += u[i];
            }
            if k == i {
                v += ua;
            }
            j[(i + 1, k + 1)] = v;
        }
    }
    j
}

/// Largest eigenvalue modulus of the 4x4 Jacobian.
pub fn jacobian_spectral_radius(n: f64, q: Vec3, b: Vec3, axis: usize) -> f64 {
    jacobian(n, q, b, axis)
        .complex_eigenvalues()
        .iter()
        .fold(0.0, |m: f64, z| m.max(z.norm()))
}

/// Rusanov flux between a left and a right state with given wave speeds.
#[inline]
pub fn rusanov(fl: Flux4, fr: Flux4, wl: Flux4, wr: Flux4, speed: f64) -> Flux4 {
    let mut f = [0.0; 4];
    for k in 0..4 {
        f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * speed * (wr[k] - wl[k]);
    }
    f
}

/// Interface flux of the explicit system between two cells.
pub fn rusanov_interface_flux(wl: (f64, Vec3), bl: Vec3, wr: (f64, Vec3), br: Vec3, axis: usize) -> Flux4 {
    let fl = explicit_flux_vector(wl.0, wl.1, bl, axis);
    let fr = explicit_flux_vector(wr.0, wr.1, br, axis);
    let d = jacobian_spectral_radius(wl.0, wl.1, bl, axis).max(jacobian_spectral_radius(wr.0, wr.1, br, axis));
    rusanov(fl, fr, pack(wl), pack(wr), d)
}

#[inline]
fn pack(w: (f64, Vec3)) -> Flux4 {
    [w.0, w.1[0], w.1[1], w.1[2]]
}

/// Cell divergence split into its mass row and momentum rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FvDivergence {
    pub mass: Vec<f64>,
    pub mom: Vec<Vec3>,
}

/// Checks that a species block is admissible.
pub fn check_state(n: &[f64], q: &[Vec3]) -> Result<()> {
    if let Some(c) = n.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidField(format!("density {} at cell {c}", n[c])));
    }
    if let Some(c) = q.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidField(format!("non-finite momentum at cell {c}")));
    }
    Ok(())
}

/// Generic Rusanov divergence. `flux(c, a)` is the physical flux of cell `c`
/// along axis `a` and `speed(c, a)` its local wave-speed bound.
pub fn rusanov_divergence(
    g: &Grid,
    n: &[f64],
    q: &[Vec3],
    flux: impl Fn(usize, usize) -> Flux4,
    speed: impl Fn(usize, usize) -> f64,
) -> FvDivergence {
    let nc = g.num_cells();
    let mut div = vec![[0.0; 4]; nc];
    for a in 0..g.dim() {
        let f: Vec<Flux4> = (0..nc).map(|c| flux(c, a)).collect();
        let s: Vec<f64> = (0..nc).map(|c| speed(c, a)).collect();
        let stride = match a {
            0 => 1,
            1 => g.n[0],
            _ => g.n[0] * g.n[1],
        };
        let inv = 1.0 / g.d[a];
        for c in 0..nc {
            let i = g.cell_ijk(c)[a];
            // Face between c and its upper neighbour; the ghost copies c.
            let up = if i + 1 < g.n[a] { c + stride } else { c };
            let fr = if up == c {
                f[c]
            } else {
                rusanov(f[c], f[up], pack((n[c], q[c])), pack((n[up], q[up])), s[c].max(s[up]))
            };
            for k in 0..4 {
                div[c][k] += fr[k] * inv;
            }
            if up != c {
                for k in 0..4 {
                    div[up][k] -= fr[k] * inv;
                }
            }
            if i == 0 {
                for k in 0..4 {
                    div[c][k] -= f[c][k] * inv;
                }
            }
        }
    }
    FvDivergence {
        mass: div.iter().map(|d| d[0]).collect(),
        mom: div.iter().map(|d| [d[1], d[2], d[3]]).collect(),
    }
}

/// Divergence of the explicit flux of one species: the mass row is the
/// divergence of `(I - b b) q`, the momentum rows that of `q ⊗ q / n`.
pub fn fv_divergence(n: &[f64], q: &[Vec3], b_cells: &[Vec3], g: &Grid) -> Result<FvDivergence> {
    check_state(n, q)?;
    let radius: Vec<[f64; 3]> = (0..g.num_cells())
        .map(|c| {
            let mut r = [0.0; 3];
            for (a, ra) in r.iter_mut().enumerate().take(g.dim()) {
                *ra = jacobian_spectral_radius(n[c], q[c], b_cells[c], a);
            }
            r
        })
        .collect();
    Ok(rusanov_divergence(
        g,
        n,
        q,
        |c, a| explicit_flux_vector(n[c], q[c], b_cells[c], a),
        |c, a| radius[c][a],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    #[test]
    fn flux_examples() {
        assert_eq!(explicit_flux_vector(1.0, [0.0; 3], [0.0, 0.0, 1.0], 0), [0.0; 4]);
        assert_eq!(explicit_flux_vector(1.0, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0), [1.0, 1.0, 0.0, 0.0]);
        let b = [0.6, 0.8, 0.0];
        for a in 0..3 {
            assert!(explicit_flux_vector(2.0, [1.2, 1.6, 0.0], b, a)[0].abs() < 1e-15);
        }
    }

    #[test]
    fn radius_examples() {
        assert!(jacobian_spectral_radius(1.0, [0.0; 3], [0.0, 0.0, 1.0], 0) < 1e-12);
        let r = jacobian_spectral_radius(1.0, [0.7, 0.0, 0.0], [1.0, 0.0, 0.0], 0);
        assert_relative_eq!(r, 1.4, epsilon = 1e-10);
        let r1 = jacobian_spectral_radius(1.0, [0.3, -0.2, 0.5], [0.0, 0.6, 0.8], 1);
        let r2 = jacobian_spectral_radius(4.0, [1.2, -0.8, 2.0], [0.0, 0.6, 0.8], 1);
        assert_relative_eq!(r1, r2, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (n, q, b) = (1.3, [0.4, -0.7, 0.2], [0.48, 0.6, 0.64]);
        for a in 0..3 {
            let j = jacobian(n, q, b, a);
            let w0 = [n, q[0], q[1], q[2]];
            for k in 0..4 {
                let e = 1e-6;
                let (mut wp, mut wm) = (w0, w0);
                wp[k] += e;
                wm[k] -= e;
                let fp = explicit_flux_vector(wp[0], [wp[1], wp[2], wp[3]], b, a);
                let fm = explicit_flux_vector(wm[0], [wm[1], wm[2], wm[3]], b, a);
                for i in 0..4 {
                    assert_relative_eq!(j[(i, k)], (fp[i] - fm[i]) / (2.0 * e), epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn equal_states_give_physical_flux() {
        let w = (1.1, [0.3, 0.2, -0.1]);
        let b = [0.0, 0.0, 1.0];
        let f = rusanov_interface_flux(w, b, w, b, 1);
        assert_eq!(f, explicit_flux_vector(w.0, w.1, b, 1));
    }

    #[test]
    fn uniform_state_has_zero_divergence() {
        let g = Grid::new(GridSpec::square(1.0, 2.0, 6)).unwrap();
        let b = vec![[0.866, -0.5, 0.0]; g.num_cells()];
        let d = fv_divergence(&vec![1.0; 36], &vec![[0.866, -0.5, 0.0]; 36], &b, &g).unwrap();
        assert!(d.mass.iter().all(|&x| x == 0.0));
        assert!(d.mom.iter().all(|x| *x == [0.0; 3]));
    }

    #[test]
    fn step_in_qx_touches_two_cells() {
        let g = Grid::new(GridSpec::new_2d((0.0, 4.0), (0.0, 2.0), 4, 2)).unwrap();
        let b = vec![[0.0, 0.0, 1.0]; g.num_cells()];
        let n = vec![1.0; g.num_cells()];
        let q: Vec<Vec3> = g.cell_centers().iter().map(|x| if x[0] < 2.0 { [1.0, 0.0, 0.0] } else { [0.0; 3] }).collect();
        let d = fv_divergence(&n, &q, &b, &g).unwrap();
        // By hand: f_L = (1, 1, 0, 0), f_R = 0, jump = (0, -1, 0, 0). The x-Jacobian
        // at u = (1, 0, 0) has the double eigenvalue 1, so the viscosity is 1.
        let face = [0.5, 1.0, 0.0, 0.0];
        for j in 0..2 {
            let l = g.cell_index(1, j, 0);
            let r = g.cell_index(2, j, 0);
            assert_relative_eq!(d.mass[l], face[0] - 1.0, epsilon = 1e-7);
            assert_relative_eq!(d.mom[l][0], face[1] - 1.0, epsilon = 1e-7);
            assert_relative_eq!(d.mass[r], -face[0], epsilon = 1e-7);
            assert_relative_eq!(d.mom[r][0], -face[1], epsilon = 1e-7);
            assert_eq!(d.mass[g.cell_index(0, j, 0)], 0.0);
            assert_eq!(d.mass[g.cell_index(3, j, 0)], 0.0);
        }
    }

    #[test]
    fn rejects_non_positive_density() {
        let g = Grid::new(GridSpec::square(0.0, 1.0, 2)).unwrap();
        let r = fv_divergence(&[1.0, 0.0, 1.0, 1.0], &[[0.0; 3]; 4], &[[0.0, 0.0, 1.0]; 4], &g);
        assert!(r.is_err());
    }
}
