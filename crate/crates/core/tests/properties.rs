//! Randomized invariants of the operators, closed-form solves and steppers.

use std::sync::Arc;

use proptest::prelude::*;

use driftlimit::ap_diffusion::{solve_direct, solve_micro_macro, AnisoDiffusionProblem, DiffusionOperators, MicroForm};
use driftlimit::ap_stepper::{solve_perp, ApStepper, PhysParams, StaticField};
use driftlimit::classical_stepper::{rotation_solve, stable_dt, step_classical, ClassicalConfig};
use driftlimit::grid::{cross, dot, norm, scale, sub, write_scalar_csv, Grid, GridSpec, Vec3};
use driftlimit::harness::config::{FieldConfig, PerturbationConfig, RunConfig};
use driftlimit::harness::two_fluid::initial_state;
use driftlimit::linalg::norm2;
use driftlimit::stencil_ops::{apply_dh, apply_dhstar, assemble_dh, extend_interior, restrict_interior, BField};

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0f64..1.0)
}

fn nonzero_vec3() -> impl Strategy<Value = Vec3> {
    vec3().prop_filter("nonzero", |v| norm(*v) > 1e-3)
}

fn max_abs(v: Vec3) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// A random smooth, nonvanishing field on `[0, 1]^2`.
fn field(c: [f64; 4]) -> impl Fn(Vec3) -> Vec3 {
    move |x| {
        [
            1.0 + 0.5 * (c[0] * x[0]).sin(),
            c[1] * x[1] + 0.2 * (c[2] * x[0]).cos(),
            c[3],
        ]
    }
}

fn setup(n: usize, c: [f64; 4]) -> (Grid, BField) {
    let g = Grid::new(GridSpec::square(0.0, 1.0, n)).unwrap();
    let b = BField::from_fn(&g, field(c)).unwrap();
    (g, b)
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-3.0f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn summation_by_parts(n in 3usize..14, c in coeffs(), seed in prop::collection::vec(-1.0f64..1.0, 400)) {
        let (g, b) = setup(n, c);
        let p: Vec<f64> = (0..g.num_cells()).map(|k| seed[k % seed.len()] + 0.01 * k as f64).collect();
        let wi: Vec<f64> = (0..g.num_interior_nodes()).map(|k| seed[(7 * k + 3) % seed.len()]).collect();
        let lhs: f64 = p.iter().zip(apply_dhstar(&extend_interior(&wi, &g), &b, &g)).map(|(a, b)| a * b).sum();
        let rhs: f64 = wi.iter().zip(restrict_interior(&apply_dh(&p, &b, &g), &g)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs + rhs).abs() <= 1e-12 * norm2(&p) * norm2(&wi).max(1.0));
    }

    #[test]
    fn assembled_dh_matches_matrix_free(n in 3usize..12, c in coeffs(), seed in prop::collection::vec(-1.0f64..1.0, 200)) {
        let (g, b) = setup(n, c);
        let p: Vec<f64> = (0..g.num_cells()).map(|k| seed[k % seed.len()]).collect();
        let a = assemble_dh(&b, &g).matvec(&p);
        let m = restrict_interior(&apply_dh(&p, &b, &g), &g);
        for (x, y) in a.iter().zip(&m) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn dh_annihilates_constants(n in 2usize..16, c in coeffs(), k in -1e3f64..1e3) {
        let (g, b) = setup(n, c);
        let d = apply_dh(&vec![k; g.num_cells()], &b, &g);
        prop_assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rotation_solve_is_exact(r in vec3(), bv in vec3(), mu in -1e4f64..1e4) {
        let v = rotation_solve(r, bv, mu);
        let res = sub(sub(v, scale(mu, cross(v, bv))), r);
        // Normwise backward error: the operator norm is about 1 + |mu||B|.
        let sc = max_abs(r) + (1.0 + mu.abs() * norm(bv)) * max_abs(v);
        prop_assert!(max_abs(res) <= 1e-13 * sc.max(1e-300), "{:e}", max_abs(res) / sc);
        // The component along B is untouched.
        prop_assert!((dot(v, bv) - dot(r, bv)).abs() <= 1e-12 * (1.0 + norm(r) * norm(bv)));
    }

    #[test]
    fn perp_solve_is_exact_and_perpendicular(r in vec3(), bv in nonzero_vec3(), gamma in -1e6f64..1e6) {
        let b = scale(1.0 / norm(bv), bv);
        let rp = sub(r, scale(dot(b, r), b));
        let q = solve_perp(rp, b, gamma);
        let res = sub(sub(q, scale(gamma, cross(b, q))), rp);
        let sc = max_abs(rp) + (1.0 + gamma.abs()) * max_abs(q);
        prop_assert!(max_abs(res) <= 1e-13 * sc.max(1e-300), "{:e}", max_abs(res) / sc);
        prop_assert!(dot(q, b).abs() <= 1e-12 * (1.0 + norm(r)));
    }

    #[test]
    fn micro_macro_matches_direct(n in 4usize..12, c in coeffs(), tau in 1e-3f64..1.0, lambda in 0.5f64..5.0,
                                   seed in prop::collection::vec(-1.0f64..1.0, 150)) {
        let (g, b) = setup(n, c);
        let f: Vec<f64> = (0..g.num_cells()).map(|k| 1.0 + 0.3 * seed[k % seed.len()]).collect();
        let h: Vec<f64> = (0..g.num_nodes()).map(|k| 1.5 + 0.5 * seed[(3 * k + 1) % seed.len()]).collect();
        let prob = AnisoDiffusionProblem { b: &b, h_coeff: Some(&h), lambda, tau, f: &f, source: None };
        let mut ops = DiffusionOperators::new(&b, &g);
        let mm = solve_micro_macro(&mut ops, &prob, &g, MicroForm::Single).unwrap().p;
        let direct = solve_direct(&ops, &prob, &g).unwrap();
        let diff: Vec<f64> = mm.iter().zip(&direct).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&diff) <= 1e-8 * norm2(&direct));
    }

    #[test]
    fn csv_round_trip(n in 2usize..8, seed in prop::collection::vec(-1e12f64..1e12, 64)) {
        let g = Grid::new(GridSpec::square(0.0, 1.0, n)).unwrap();
        let u: Vec<f64> = (0..g.num_cells()).map(|k| seed[k % seed.len()] * 1.000_000_1f64.powi(k as i32)).collect();
        let mut buf = Vec::new();
        write_scalar_csv(&mut buf, &u, &g).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        prop_assert_eq!(back, u);
    }

    #[test]
    fn override_sets_nested_value(dt in 1e-9f64..1e-5, cells in 4usize..300) {
        let c = RunConfig::from_sources(None, &[format!("physics.dt={dt:e}"), format!("grid.cells=[{cells},{cells}]")]).unwrap();
        prop_assert_eq!(c.physics.dt, dt);
        prop_assert_eq!(c.grid.cells, [cells, cells]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn single_steps_are_consistent(tau in 1e-6f64..1e-2, eta in 20.0f64..120.0, dt in 1e-8f64..1e-6,
                                   alpha in 0.1f64..3.0, x0 in 1.3f64..1.7) {
        let mut cfg = RunConfig::default();
        cfg.grid.cells = [12, 12];
        let g = Arc::new(Grid::new(cfg.grid.spec()).unwrap());
        let fc = FieldConfig { alpha, ..cfg.field.clone() };
        let pert = PerturbationConfig { eta, x0, ..cfg.perturbation.clone() };
        let b = Arc::new(BField::uniform(&g, fc.vector()).unwrap());
        let s0 = initial_state(&g, &fc, &pert, tau);
        let p = PhysParams { tau, dt, ..cfg.params() };

        let mut ap = ApStepper::new(g.clone(), p, Arc::new(StaticField(b.clone()))).unwrap();
        let (s1, d) = ap.step(&s0, 0).unwrap();
        prop_assert!(d.max_consistency() <= 1e-6, "ap consistency {}", d.max_consistency());
        for q in s1.qi.iter().chain(&s1.qe) {
            prop_assert!(q.iter().all(|x| x.is_finite()));
        }

        let cc = ClassicalConfig::default();
        let pc = PhysParams { dt: stable_dt(&s0, &p, &cc, &g), ..p };
        let (_, d) = step_classical(&s0, &b, &pc, &cc, &g, 0).unwrap();
        prop_assert!(d.max_consistency() <= 1e-6, "classical consistency {}", d.max_consistency());
    }
}
