//! Plain versus averaged PDMM on an L1 consensus problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::output::Artifact;
use crate::analysis;
use crate::error::Result;
use crate::graph::Graph;
use crate::instances;
use crate::linalg::Vector;
use crate::pdmm::{IterationTrace, Pdmm, PdmmConfig, TraceReference};
use crate::problem::{NodeObjective, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationVerdict {
    pub plain_tail_min: f64,
    pub averaged_final: f64,
    /// Sign changes of the first differences over the last quarter.
    pub sign_changes: usize,
    pub oscillatory: bool,
}

/// Flags a plain run as non-convergent when its last-quarter minimum stays
/// above 10x the averaged run's final value and the tail is not monotone.
pub fn classify(plain: &[f64], averaged_final: f64) -> OscillationVerdict {
    let tail = &plain[plain.len() - plain.len().div_ceil(4)..];
    let plain_tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sign_changes = 0;
    let mut last = 0.0_f64;
    for w in tail.windows(2) {
        let d = w[1] - w[0];
        if d != 0.0 {
            if last != 0.0 && d.signum() != last.signum() {
                sign_changes += 1;
            }
            last = d;
        }
    }
    let oscillatory = plain_tail_min > 10.0 * averaged_final && sign_changes > 0;
    OscillationVerdict { plain_tail_min, averaged_final, sign_changes, oscillatory }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Report {
    pub rho: f64,
    pub alpha: f64,
    pub f_star: f64,
    pub graph_seed: u64,
    pub verdict: OscillationVerdict,
    /// First iteration with averaged suboptimality at most `1e−6`.
    pub averaged_hit_1e6: Option<usize>,
    /// Whether an explicit `½(I + T_P)` run reproduced the averaged run bit for bit.
    pub admm_bit_identical: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct L1Outcome {
    pub graph: Graph,
    pub skipped_seeds: Vec<u64>,
    pub plain: IterationTrace,
    pub averaged: IterationTrace,
    pub report: L1Report,
}

pub fn instance(cfg: &ExperimentConfig) -> Result<(ProblemInstance, u64, Vec<u64>)> {
    let (graph, used, skipped) = instances::connected_er(cfg.n_nodes, cfg.probability(), cfg.seed, super::pnorm::MAX_GRAPH_TRIES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let objectives = (0..cfg.n_nodes)
        .map(|_| NodeObjective::L1 { a: instances::random_vector(cfg.node_dim, &mut rng) })
        .collect();
    Ok((ProblemInstance::consensus(graph, objectives)?, used, skipped))
}

fn subopt(trace: &IterationTrace) -> Vec<f64> {
    trace.records.iter().map(|r| r.objective_subopt.unwrap_or(f64::NAN)).collect()
}

/// Runs `iterations` steps of `½(I + T_P)` and compares every iterate with
/// the averaged trace.
fn admm_matches(engine: &Pdmm<'_>, z0: &Vector, averaged: &IterationTrace, iterations: usize) -> Result<bool> {
    let mut z = z0.clone();
    for k in 0..iterations {
        z = engine.apply_admm(&z)?;
        if averaged.z_iterates.get(k) != Some(&z) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn run_l1_compare(cfg: &ExperimentConfig) -> Result<L1Outcome> {
    cfg.validate()?;
    let (prob, graph_seed, skipped_seeds) = instance(cfg)?;
    let rho = cfg.fixed_rho();
    let alpha = cfg.alpha();
    let iters = cfg.iterations();
    let x_star = analysis::centralized_oracle(&prob)?;
    let f_star = prob.objective_value(&x_star);
    let reference = TraceReference { z_tilde: None, x_star: None, f_star: Some(f_star) };
    let engine = Pdmm::new(&prob, rho)?;
    let z0 = Vector::zeros(prob.layout.m_e);
    let (_, plain) = engine.run(&PdmmConfig::new(rho, iters), &z0, Some(&reference))?;
    let keep = alpha == 0.5;
    let mut avg_cfg = PdmmConfig::new(rho, iters).with_alpha(alpha);
    avg_cfg.keep_iterates = keep;
    let (_, mut averaged) = engine.run(&avg_cfg, &z0, Some(&reference))?;
    let admm_bit_identical = if keep { Some(admm_matches(&engine, &z0, &averaged, iters)?) } else { None };
    averaged.z_iterates.clear();
    averaged.x_iterates.clear();

    let avg = subopt(&averaged);
    let verdict = classify(&subopt(&plain), *avg.last().unwrap_or(&f64::NAN));
    let averaged_hit_1e6 = averaged.records.iter().find(|r| r.objective_subopt.is_some_and(|s| s <= 1e-6)).map(|r| r.k);
    let report = L1Report { rho, alpha, f_star, graph_seed, verdict, averaged_hit_1e6, admm_bit_identical };
    Ok(L1Outcome { graph: prob.graph.clone(), skipped_seeds, plain, averaged, report })
}

impl L1Outcome {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        Ok(vec![
            Artifact::new("trace_l1_plain.csv", self.plain.to_csv()),
            Artifact::new("trace_l1_averaged.csv", self.averaged.to_csv()),
            Artifact::json("report_l1.json", &self.report)?,
        ])
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "graph_seed": self.report.graph_seed,
            "skipped_seeds": self.skipped_seeds,
            "plain_oscillatory": self.report.verdict.oscillatory,
            "averaged_final_subopt": self.report.verdict.averaged_final,
            "admm_bit_identical": self.report.admm_bit_identical,
        })
    }
}
