//! Run configuration: JSON document, named presets and dotted overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ap_stepper::{PhiNormalization, PhysParams};
use crate::classical_stepper::ClassicalConfig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DiffusionValidate,
    #[default]
    Simulate,
    CStudy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ap,
    Classical,
    #[default]
    Both,
}

impl Scheme {
    pub fn runs_ap(self) -> bool {
        matches!(self, Scheme::Ap | Scheme::Both)
    }

    pub fn runs_classical(self) -> bool {
        matches!(self, Scheme::Classical | Scheme::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub cells: [usize; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { lo: [1.0, 1.0], hi: [2.0, 2.0], cells: [100, 100] }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec::new_2d((self.lo[0], self.hi[0]), (self.lo[1], self.hi[1]), self.cells[0], self.cells[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub tau: f64,
    pub eps: f64,
    pub te: f64,
    pub c: f64,
    pub dt: f64,
    pub phi_normalization: PhiNormalization,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            tau: 1e-8,
            eps: 1.0,
            te: 3.0,
            c: 1e-2,
            dt: 5e-9,
            phi_normalization: PhiNormalization::Consistent,
        }
    }
}

impl PhysicsConfig {
    pub fn params(&self) -> PhysParams {
        PhysParams {
            tau: self.tau,
            eps: self.eps,
            te: self.te,
            c: self.c,
            dt: self.dt,
            phi_normalization: self.phi_normalization,
        }
    }
}

/// Uniform field `|B| (sin alpha, -cos alpha, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub alpha: f64,
    pub magnitude: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { alpha: 2.0 * std::f64::consts::PI / 3.0, magnitude: 1.0 }
    }
}

impl FieldConfig {
    pub fn vector(&self) -> [f64; 3] {
        [self.magnitude * self.alpha.sin(), -self.magnitude * self.alpha.cos(), 0.0]
    }
}

/// Density bump `n0 + tau max(0, 1 - eta |x - x0|^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub eta: f64,
    pub x0: f64,
    pub y0: f64,
    pub n0: f64,
    pub phi0: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { eta: 80.0, x0: 1.5, y0: 1.5, n0: 1.0, phi0: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct OutputConfig {
    /// Field dump interval in steps; 0 writes only the initial and final states.
    pub dump_every: usize,
    /// Also write the assembled `dh` operator as COO text.
    pub operator_dump: bool,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub grids: Vec<usize>,
    pub h_taus: Vec<f64>,
    pub tau_sweep: Vec<f64>,
    pub sweep_cells: usize,
    /// Step of the finite differences that build the manufactured source.
    pub fd_step: f64,
    pub oracle_taus: Vec<f64>,
    pub oracle_cells: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            grids: vec![25, 50, 100, 200],
            h_taus: vec![1e-2, 1e-9],
            tau_sweep: (2..=9).map(|k| 10f64.powi(-k)).collect(),
            sweep_cells: 100,
            fd_step: 1e-5,
            oracle_taus: vec![1e-1, 1e-2, 1e-3],
            oracle_cells: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CStudyConfig {
    pub cs: Vec<f64>,
    pub dts: Vec<f64>,
    /// Final time for each entry of `cs`.
    pub horizons: Vec<f64>,
    pub cells: usize,
    /// Width in cells of the boundary band inspected for artifacts.
    pub band: usize,
    /// Band deviation, relative to the reference perturbation size, above
    /// which a stable run is flagged.
    pub artifact_threshold: f64,
}

impl Default for CStudyConfig {
    fn default() -> Self {
        CStudyConfig {
            cs: vec![1e-2, 1e-3, 1e-4],
            dts: vec![1e-6, 1e-7, 1e-8],
            horizons: vec![6e-6, 4e-6, 2e-6],
            cells: 50,
            band: 3,
            artifact_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub experiment: Experiment,
    pub scheme: Scheme,
    pub t_end: f64,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub field: FieldConfig,
    pub perturbation: PerturbationConfig,
    pub classical: ClassicalConfig,
    pub output: OutputConfig,
    pub diffusion: DiffusionConfig,
    pub c_study: CStudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            experiment: Experiment::Simulate,
            scheme: Scheme::Both,
            t_end: 6e-6,
            grid: GridConfig::default(),
            physics: PhysicsConfig::default(),
            field: FieldConfig::default(),
            perturbation: PerturbationConfig::default(),
            classical: ClassicalConfig::default(),
            output: OutputConfig::default(),
            diffusion: DiffusionConfig::default(),
            c_study: CStudyConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["resolved", "under-resolved", "stationary"];

/// Overrides that a named preset applies on top of the defaults.
fn preset_value(name: &str) -> Result<Value> {
    let v = match name {
        "resolved" => serde_json::json!({}),
        "under-resolved" => serde_json::json!({ "physics": { "dt": 1e-6 } }),
        "stationary" => serde_json::json!({ "perturbation": { "eta": 0.0 }, "physics": { "dt": 1e-6 } }),
        _ => {
            return Err(Error::Config {
                path: "preset".into(),
                msg: format!("unknown preset `{name}`, expected one of {PRESETS:?}"),
            })
        }
    };
    Ok(v)
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Parses the right-hand side of `--override`: JSON if it parses, else a
/// bare string.
fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

/// Applies `a.b.c=value` to a JSON document.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| Error::Config {
        path: spec.into(),
        msg: "override must have the form key.path=value".into(),
    })?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config { path: path.into(), msg: "empty key in override path".into() });
    }
    let mut cur = doc;
    for k in &keys[..keys.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(k.to_string())
            .or_insert(Value::Object(Default::default()));
    }
    if !cur.is_object() {
        *cur = Value::Object(Default::default());
    }
    cur.as_object_mut()
        .expect("object")
        .insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Maps serde's "unknown field" errors to a readable message with the path.
fn config_error(e: serde_json::Error, doc: &Value) -> Error {
    let msg = e.to_string();
    // serde_json reports no path; find the first offending key ourselves.
    let path = unknown_key_path(doc, &serde_json::to_value(RunConfig::default()).expect("serializable"), "")
        .unwrap_or_else(|| "<root>".into());
    Error::Config { path, msg }
}

fn unknown_key_path(doc: &Value, reference: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(d), Value::Object(r)) = (doc, reference) else {
        return None;
    };
    for (k, v) in d {
        let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => return Some(p),
            Some(rv) => {
                if let Some(found) = unknown_key_path(v, rv, &p) {
                    return Some(found);
                }
            }
        }
    }
    None
}

impl RunConfig {
    /// Builds a config from an optional JSON document and overrides. A
    /// `preset` key, from either source, is expanded first.
    pub fn from_sources(doc: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut user = match doc {
            Some(text) => serde_json::from_str(text)
                .map_err(|e| Error::Config { path: "<file>".into(), msg: e.to_string() })?,
            None => Value::Object(Default::default()),
        };
        if !user.is_object() {
            return Err(Error::Config { path: "<root>".into(), msg: "config must be a JSON object".into() });
        }
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let mut full = Value::Object(Default::default());
        if let Some(Value::String(name)) = user.get("preset") {
            full = preset_value(name)?;
        }
        merge(&mut full, &user);
        let cfg: RunConfig = serde_json::from_value(full.clone()).map_err(|e| config_error(e, &full))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, msg: String| Err(Error::Config { path: path.into(), msg });
        self.params().validate().map_err(|e| Error::Config { path: "physics".into(), msg: e.to_string() })?;
        if !(self.physics.tau > 0.0) && self.experiment != Experiment::DiffusionValidate {
            return err("physics.tau", "time stepping needs tau > 0".into());
        }
        if !(self.t_end > 0.0) {
            return err("t_end", format!("must be > 0, got {}", self.t_end));
        }
        self.grid.spec().validate().map_err(|e| Error::Config { path: "grid".into(), msg: e.to_string() })?;
        self.classical.validate().map_err(|e| Error::Config { path: "classical".into(), msg: e.to_string() })?;
        let d = &self.diffusion;
        if d.grids.len() < 3 || d.tau_sweep.len() < 3 {
            return err("diffusion", "slope fits need at least 3 grids and 3 tau values".into());
        }
        if !(d.fd_step > 0.0) {
            return err("diffusion.fd_step", "must be > 0".into());
        }
        let c = &self.c_study;
        if c.horizons.len() != c.cs.len() {
            return err("c_study.horizons", "needs one horizon per value of C".into());
        }
        if c.cs.iter().any(|&x| !(x > 0.0)) || c.dts.iter().any(|&x| !(x > 0.0)) {
            return err("c_study", "C and dt values must be > 0".into());
        }
        Ok(())
    }

    pub fn params(&self) -> PhysParams {
        self.physics.params()
    }

    /// Multiplies every grid resolution by `s` (at least 2 cells per axis).
    pub fn scale_resolution(&mut self, s: f64) -> Result<()> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Config { path: "--scale".into(), msg: format!("must be > 0, got {s}") });
        }
        let f = |n: usize| ((n as f64 * s).round() as usize).max(2);
        self.grid.cells = [f(self.grid.cells[0]), f(self.grid.cells[1])];
        self.diffusion.grids = self.diffusion.grids.iter().map(|&n| f(n)).collect();
        self.diffusion.sweep_cells = f(self.diffusion.sweep_cells);
        self.diffusion.oracle_cells = f(self.diffusion.oracle_cells);
        self.c_study.cells = f(self.c_study.cells);
        Ok(())
    }

    /// Canonical JSON (keys sorted by serde_json's map ordering).
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config is serializable");
        serde_json::to_string(&v).expect("value is serializable")
    }

    /// SHA-256 of the canonical JSON wrapped as a git blob object.
    pub fn content_hash(&self) -> String {
        let body = self.canonical_json();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_resolved_preset() {
        let a = RunConfig::from_sources(None, &[]).unwrap();
        let b = RunConfig::from_sources(Some(r#"{"preset": "resolved"}"#), &[]).unwrap();
        assert_eq!(a.physics, b.physics);
        assert_eq!(a.physics.dt, 5e-9);
        assert_eq!(a.t_end, 6e-6);
        assert_eq!(a.grid.cells, [100, 100]);
    }

    #[test]
    fn presets_and_overrides() {
        let c = RunConfig::from_sources(None, &["preset=under-resolved".into(), "grid.cells=[50,50]".into()]).unwrap();
        assert_eq!(c.physics.dt, 1e-6);
        assert_eq!(c.grid.cells, [50, 50]);
        let c = RunConfig::from_sources(Some(r#"{"preset":"stationary","physics":{"dt":2e-6}}"#), &[]).unwrap();
        assert_eq!(c.perturbation.eta, 0.0);
        assert_eq!(c.physics.dt, 2e-6);
        let c = RunConfig::from_sources(None, &["scheme=ap".into()]).unwrap();
        assert_eq!(c.scheme, Scheme::Ap);
    }

    #[test]
    fn rejects_bad_input() {
        let e = RunConfig::from_sources(None, &["physics.tau=-1".into()]).unwrap_err();
        assert!(e.to_string().contains("tau"), "{e}");
        let e = RunConfig::from_sources(Some(r#"{"physics": {"tua": 1}}"#), &[]).unwrap_err();
        assert!(e.to_string().contains("physics.tua"), "{e}");
        assert!(RunConfig::from_sources(None, &["preset=nope".into()]).is_err());
        assert!(RunConfig::from_sources(None, &["noequals".into()]).is_err());
        let e = RunConfig::from_sources(
            None,
            &["physics.te=1".into(), "physics.phi_normalization=published".into()],
        )
        .unwrap_err();
        assert!(e.to_string().contains("lambda2"), "{e}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.physics.c = 1e-3;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn scale_changes_grids_only() {
        let mut c = RunConfig::default();
        c.scale_resolution(0.5).unwrap();
        assert_eq!(c.grid.cells, [50, 50]);
        assert_eq!(c.diffusion.grids, vec![13, 25, 50, 100]);
        assert_eq!(c.physics.dt, 5e-9);
        assert!(c.scale_resolution(0.0).is_err());
    }
}
