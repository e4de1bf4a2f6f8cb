//! Experiment drivers behind the `driftlimit` command line.

pub mod c_study;
pub mod config;
pub mod diffusion;
pub mod two_fluid;

use std::path::Path;

use serde_json::{json, Value};

use crate::error::Result;
use config::{Experiment, RunConfig};

/// Writes `meta.json`: resolved config, its content hash, derived constants
/// and the run summary.
pub fn write_meta(dir: &Path, cfg: &RunConfig, summary: &Value) -> Result<()> {
    let p = cfg.params();
    let meta = json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.content_hash(),
        "config": cfg,
        "grid": cfg.grid.spec(),
        "derived": {
            "c_i": p.c_i(),
            "c_e": p.c_e(),
            "lambda1": p.lambda1(),
            "lambda2": p.lambda2(),
        },
        "summary": summary,
    });
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Runs the configured experiment, writing all artifacts to `out`, and
/// returns the summary also stored in `meta.json`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Value> {
    std::fs::create_dir_all(out)?;
    let summary = match cfg.experiment {
        Experiment::DiffusionValidate => {
            let r = diffusion::run_diffusion_validation(&cfg.diffusion)?;
            for (t, tau) in r.h_tables.iter().zip(&cfg.diffusion.h_taus) {
                t.write_csv(std::fs::File::create(out.join(format!("convergence_h_tau{tau:e}.csv")))?)?;
            }
            r.tau_table.write_csv(std::fs::File::create(out.join("convergence_tau.csv"))?)?;
            serde_json::to_value(&r)?
        }
        Experiment::Simulate => {
            let r = two_fluid::run_two_fluid(cfg, Some(out))?;
            serde_json::to_value(&r)?
        }
        Experiment::CStudy => {
            let map = c_study::run_c_study(cfg)?;
            c_study::write_stability_map(&out.join("stability_map.csv"), &map)?;
            serde_json::to_value(&map)?
        }
    };
    write_meta(out, cfg, &summary)?;
    Ok(summary)
}
