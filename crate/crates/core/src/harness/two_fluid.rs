//! Two-fluid runs: the perturbed stationary state with a uniform field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::ap_stepper::{ApStepper, PhysParams, PlasmaState, StaticField, StepDiagnostics};
use crate::classical_stepper::{detect_blowup, stable_dt, step_classical, ClassicalConfig};
use crate::error::{Error, Result};
use crate::grid::{write_scalar_csv, write_vector_csv, CellVecField, Grid, Vec3};
use crate::linalg::norm2;
use crate::stencil_ops::BField;

use super::config::{FieldConfig, PerturbationConfig, RunConfig};

/// Initial data: uniform field-aligned momenta and a density bump of
/// height `tau`.
pub fn initial_state(g: &Grid, field: &FieldConfig, pert: &PerturbationConfig, tau: f64) -> PlasmaState {
    let bv = field.vector();
    let nc = g.num_cells();
    let n = g
        .cell_centers()
        .iter()
        .map(|x| {
            let r2 = (x[0] - pert.x0).powi(2) + (x[1] - pert.y0).powi(2);
            pert.n0 + tau * (1.0 - pert.eta * r2).max(0.0)
        })
        .collect();
    PlasmaState { n, qi: vec![bv; nc], qe: vec![bv; nc], phi: vec![pert.phi0; nc], t: 0.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Ap,
    Classical,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Ap => "ap",
            SchemeKind::Classical => "classical",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagRow {
    pub step: usize,
    pub time: f64,
    #[serde(flatten)]
    pub diag: StepDiagnostics,
    pub max_q: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub scheme: SchemeKind,
    pub dt: f64,
    pub steps_requested: usize,
    pub steps_taken: usize,
    pub completed: bool,
    /// One-based number of the step that diverged.
    pub diverged_at: Option<usize>,
    pub reason: Option<String>,
    /// Largest continuity or momentum consistency residual over all steps.
    pub max_consistency: f64,
    #[serde(skip)]
    pub diagnostics: Vec<DiagRow>,
    #[serde(skip)]
    pub final_state: PlasmaState,
}

/// Writes field dumps as the run advances.
pub struct FieldSink {
    pub dir: PathBuf,
    pub every: usize,
}

impl FieldSink {
    fn wants(&self, step: usize, last: bool) -> bool {
        step == 0 || last || (self.every > 0 && step.is_multiple_of(self.every))
    }

    fn dump(&self, g: &Grid, s: &PlasmaState, scheme: SchemeKind) -> Result<()> {
        let stem = format!("fields_{:.6e}_{}", s.t, scheme.name());
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(self.dir.join(format!("{stem}_{name}.csv")))?))
        };
        write_scalar_csv(open("n")?, &s.n, g)?;
        write_scalar_csv(open("phi")?, &s.phi, g)?;
        write_vector_csv(open("qi")?, &s.qi, g)?;
        write_vector_csv(open("qe")?, &s.qe, g)?;
        Ok(())
    }
}

pub fn num_steps(t_end: f64, dt: f64) -> usize {
    ((t_end / dt).round() as usize).max(1)
}

/// Advances `s0` with either scheme, recording divergence instead of failing.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    scheme: SchemeKind,
    g: &Arc<Grid>,
    b: &Arc<BField>,
    p: &PhysParams,
    classical: &ClassicalConfig,
    s0: &PlasmaState,
    t_end: f64,
    sink: Option<&FieldSink>,
) -> Result<RunRecord> {
    let steps = num_steps(t_end, p.dt);
    let q0 = s0.max_q();
    let mut ap = match scheme {
        SchemeKind::Ap => Some(ApStepper::new(g.clone(), *p, Arc::new(StaticField(b.clone())))?),
        SchemeKind::Classical => None,
    };
    let mut rec = RunRecord {
        scheme,
        dt: p.dt,
        steps_requested: steps,
        steps_taken: 0,
        completed: false,
        diverged_at: None,
        reason: None,
        max_consistency: 0.0,
        diagnostics: Vec::with_capacity(steps),
        final_state: s0.clone(),
    };
    if let Some(sink) = sink {
        sink.dump(g, s0, scheme)?;
    }
    let mut s = s0.clone();
    for k in 0..steps {
        let out = match ap.as_mut() {
            Some(st) => st.step(&s, k),
            None => step_classical(&s, b, p, classical, g, k),
        };
        let (next, diag) = match out {
            Ok(x) => x,
            Err(Error::Diverged { step, reason }) => {
                rec.diverged_at = Some(step + 1);
                rec.reason = Some(reason);
                break;
            }
            Err(e) => return Err(e),
        };
        rec.steps_taken = k + 1;
        rec.max_consistency = rec.max_consistency.max(diag.max_consistency());
        rec.diagnostics.push(DiagRow { step: k + 1, time: next.t, diag, max_q: next.max_q() });
        s = next;
        if detect_blowup(&s, q0) {
            rec.diverged_at = Some(k + 1);
            rec.reason = Some("momentum blow-up".into());
            break;
        }
        if let Some(sink) = sink {
            if sink.wants(k + 1, k + 1 == steps) {
                sink.dump(g, &s, scheme)?;
            }
        }
    }
    rec.completed = rec.diverged_at.is_none();
    rec.final_state = s;
    Ok(rec)
}

/// Per-species, per-component relative L2 differences of the momenta.
#[derive(Clone, Debug, Serialize)]
pub struct MomentumComparison {
    /// `|a - b| / |b|` per species (ions, electrons) and component.
    pub relative: [[f64; 3]; 2],
    /// `|a - b| / |b - q0|`: differences relative to the perturbation.
    pub perturbation_relative: [[f64; 3]; 2],
}

impl MomentumComparison {
    pub fn max_relative(&self) -> f64 {
        self.relative.iter().flatten().fold(0.0, |m: f64, &x| m.max(x))
    }

    pub fn max_perturbation_relative(&self) -> f64 {
        self.perturbation_relative.iter().flatten().fold(0.0, |m: f64, &x| m.max(x))
    }
}

fn component(v: &[Vec3], k: usize) -> Vec<f64> {
    v.iter().map(|x| x[k]).collect()
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn compare_momenta(a: &PlasmaState, reference: &PlasmaState, q0: Vec3) -> MomentumComparison {
    let mut out = MomentumComparison { relative: [[0.0; 3]; 2], perturbation_relative: [[0.0; 3]; 2] };
    let pairs: [(&CellVecField, &CellVecField); 2] = [(&a.qi, &reference.qi), (&a.qe, &reference.qe)];
    for (s, (qa, qr)) in pairs.iter().enumerate() {
        for k in 0..3 {
            let (ca, cr) = (component(qa, k), component(qr, k));
            let d: Vec<f64> = ca.iter().zip(&cr).map(|(x, y)| x - y).collect();
            let pert: Vec<f64> = cr.iter().map(|y| y - q0[k]).collect();
            out.relative[s][k] = ratio(norm2(&d), norm2(&cr));
            out.perturbation_relative[s][k] = ratio(norm2(&d), norm2(&pert));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoFluidReport {
    pub runs: Vec<RunRecord>,
    /// AP against classical, when both ran and completed.
    pub comparison: Option<MomentumComparison>,
}

pub fn write_diagnostics(path: &Path, runs: &[RunRecord]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "scheme,step,time,continuity_i,continuity_e,momentum_i,momentum_e,ap_node_i,ap_node_e,\
         continuity_cell_flux_i,continuity_cell_flux_e,solver_iterations,max_q"
    )?;
    for r in runs {
        for d in &r.diagnostics {
            let g = &d.diag;
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                r.scheme.name(),
                d.step,
                d.time,
                g.continuity[0],
                g.continuity[1],
                g.momentum[0],
                g.momentum[1],
                g.ap_node[0],
                g.ap_node[1],
                g.continuity_cell_flux[0],
                g.continuity_cell_flux[1],
                g.solver_iterations,
                d.max_q
            )?;
        }
    }
    Ok(())
}

/// Runs the configured scheme(s) from the perturbed initial data.
pub fn run_two_fluid(cfg: &RunConfig, out: Option<&Path>) -> Result<TwoFluidReport> {
    let g = Arc::new(Grid::new(cfg.grid.spec())?);
    let b = Arc::new(BField::uniform(&g, cfg.field.vector())?);
    let p = cfg.params();
    let s0 = initial_state(&g, &cfg.field, &cfg.perturbation, p.tau);
    let sink = out.map(|d| FieldSink { dir: d.to_path_buf(), every: cfg.output.dump_every });
    let mut schemes = Vec::new();
    if cfg.scheme.runs_ap() {
        schemes.push(SchemeKind::Ap);
    }
    if cfg.scheme.runs_classical() {
        schemes.push(SchemeKind::Classical);
    }
    let runs = schemes
        .iter()
        .map(|&k| simulate(k, &g, &b, &p, &cfg.classical, &s0, cfg.t_end, sink.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let comparison = match runs.as_slice() {
        [a, c] if a.completed && c.completed => Some(compare_momenta(&a.final_state, &c.final_state, cfg.field.vector())),
        _ => None,
    };
    if let Some(dir) = out {
        write_diagnostics(&dir.join("diagnostics.csv"), &runs)?;
        if cfg.output.operator_dump {
            let m = crate::stencil_ops::assemble_dh(&b, &g);
            m.write_coo(std::io::BufWriter::new(std::fs::File::create(dir.join("operator_dh.coo"))?))?;
        }
    }
    Ok(TwoFluidReport { runs, comparison })
}

/// Classical step bound for the configured initial data.
pub fn classical_stable_dt(cfg: &RunConfig) -> Result<f64> {
    let g = Grid::new(cfg.grid.spec())?;
    let s0 = initial_state(&g, &cfg.field, &cfg.perturbation, cfg.physics.tau);
    Ok(stable_dt(&s0, &cfg.params(), &cfg.classical, &g))
}
