//! Stability of the AP scheme as a function of the regularization constant
//! `C` and the time step.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::classical_stepper::ClassicalConfig;
use crate::error::Result;
use crate::grid::{Grid, GridSpec};
use crate::stencil_ops::BField;

use super::config::RunConfig;
use super::two_fluid::{initial_state, simulate, RunRecord, SchemeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    BoundaryArtifacts,
    Diverged,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::BoundaryArtifacts => "boundary-artifacts",
            Verdict::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MapEntry {
    pub c: f64,
    pub dt: f64,
    pub horizon: f64,
    pub verdict: Verdict,
    /// Largest `q_i,x` deviation from the reference run inside the boundary
    /// band, divided by the reference perturbation `max |q_i,x - B_x|`.
    pub boundary_metric: f64,
    /// Same ratio over the whole domain.
    pub domain_metric: f64,
    pub steps_taken: usize,
    pub max_consistency: f64,
}

/// `(band deviation, domain deviation)` of `q_i,x`, both relative to the
/// reference perturbation.
pub fn artifact_metrics(run: &RunRecord, reference: &RunRecord, bx: f64, band: &[bool]) -> (f64, f64) {
    let (a, r) = (&run.final_state.qi, &reference.final_state.qi);
    let pert = r.iter().fold(0.0, |m: f64, q| m.max((q[0] - bx).abs()));
    let (mut in_band, mut all) = (0.0f64, 0.0f64);
    for c in 0..a.len() {
        let d = (a[c][0] - r[c][0]).abs();
        all = all.max(d);
        if band[c] {
            in_band = in_band.max(d);
        }
    }
    let rel = |x: f64| if x == 0.0 { 0.0 } else { x / pert };
    (rel(in_band), rel(all))
}

/// Runs the `(C, dt)` grid. The reference for each `C` is its smallest `dt`.
pub fn run_c_study(cfg: &RunConfig) -> Result<Vec<MapEntry>> {
    let cs = &cfg.c_study;
    let g = Arc::new(Grid::new(GridSpec::new_2d(
        (cfg.grid.lo[0], cfg.grid.hi[0]),
        (cfg.grid.lo[1], cfg.grid.hi[1]),
        cs.cells,
        cs.cells,
    ))?);
    let b = Arc::new(BField::uniform(&g, cfg.field.vector())?);
    let s0 = initial_state(&g, &cfg.field, &cfg.perturbation, cfg.physics.tau);
    let jobs: Vec<(usize, f64)> = (0..cs.cs.len())
        .flat_map(|i| cs.dts.iter().map(move |&dt| (i, dt)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(i, dt)| {
            let mut p = cfg.params();
            p.c = cs.cs[i];
            p.dt = dt;
            simulate(SchemeKind::Ap, &g, &b, &p, &ClassicalConfig::default(), &s0, cs.horizons[i], None)
        })
        .collect::<Result<Vec<_>>>()?;

    let band = g.boundary_band(cs.band);
    let bx = cfg.field.vector()[0];
    let mut out = Vec::with_capacity(jobs.len());
    for (i, &c) in cs.cs.iter().enumerate() {
        let idx: Vec<usize> = (0..jobs.len()).filter(|&k| jobs[k].0 == i).collect();
        let refk = *idx
            .iter()
            .min_by(|&&a, &&b| jobs[a].1.total_cmp(&jobs[b].1))
            .expect("at least one dt");
        for &k in &idx {
            let r = &records[k];
            let (bm, dm) = if r.completed && records[refk].completed {
                artifact_metrics(r, &records[refk], bx, &band)
            } else {
                (f64::NAN, f64::NAN)
            };
            let verdict = if !r.completed {
                Verdict::Diverged
            } else if bm > cs.artifact_threshold {
                Verdict::BoundaryArtifacts
            } else {
                Verdict::Stable
            };
            out.push(MapEntry {
                c,
                dt: jobs[k].1,
                horizon: cs.horizons[i],
                verdict,
                boundary_metric: bm,
                domain_metric: dm,
                steps_taken: r.steps_taken,
                max_consistency: r.max_consistency,
            });
        }
    }
    Ok(out)
}

pub fn write_stability_map(path: &Path, map: &[MapEntry]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "C,dt,verdict,boundary_metric,domain_metric,steps_taken")?;
    for e in map {
        writeln!(
            w,
            "{:e},{:e},{},{:.16e},{:.16e},{}",
            e.c,
            e.dt,
            e.verdict.name(),
            e.boundary_metric,
            e.domain_metric,
            e.steps_taken
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_map_runs() {
        let mut cfg = RunConfig::default();
        cfg.c_study.cells = 8;
        cfg.c_study.cs = vec![1e-2];
        cfg.c_study.dts = vec![1e-6, 5e-7];
        cfg.c_study.horizons = vec![2e-6];
        let map = run_c_study(&cfg).unwrap();
        assert_eq!(map.len(), 2);
        let reference = map.iter().find(|e| e.dt == 5e-7).unwrap();
        assert_eq!(reference.verdict, Verdict::Stable);
        assert_eq!(reference.boundary_metric, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stability_map.csv");
        write_stability_map(&path, &map).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 3);
    }
}
