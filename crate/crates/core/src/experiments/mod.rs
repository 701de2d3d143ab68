//! Seed-deterministic experiment drivers producing CSV traces, JSON reports
//! and a manifest.

pub mod config;
pub mod l1;
pub mod output;
pub mod pnorm;
pub mod quad_bound;

pub use config::{ExperimentConfig, ExperimentKind, RhoMode, Z0Scaling};
pub use output::{write_artifacts, Artifact, Manifest};

use crate::error::Result;
use crate::parallel::Execution;

/// Everything an experiment writes, manifest last.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub artifacts: Vec<Artifact>,
    pub manifest: Manifest,
    /// Runs or instances that ended in an error and were skipped.
    pub failures: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    let (mut artifacts, summary, failures) = match cfg.kind {
        ExperimentKind::PnormSweep => {
            let out = pnorm::run_pnorm_sweep(cfg, exec)?;
            let failed = out.runs.iter().filter(|r| r.report.error.is_some()).count();
            (out.artifacts()?, out.summary(), failed)
        }
        ExperimentKind::L1Compare => {
            let out = l1::run_l1_compare(cfg)?;
            (out.artifacts()?, out.summary(), 0)
        }
        ExperimentKind::QuadraticBound => {
            let out = quad_bound::run_quadratic_bound(cfg, exec)?;
            (out.artifacts()?, out.summary(), out.failures.len())
        }
    };
    let manifest = Manifest::new(cfg, &artifacts, summary);
    artifacts.push(Artifact::json("manifest.json", &manifest)?);
    Ok(ExperimentOutput { artifacts, manifest, failures })
}
