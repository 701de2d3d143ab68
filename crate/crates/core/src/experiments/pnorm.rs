//! Plain PDMM on consensus problems with `f_i(x) = ‖x − a_i‖_p^p`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RhoMode};
use super::output::Artifact;
use crate::analysis::{self, GHatSource, SpectralReport};
use crate::error::Result;
use crate::graph::Graph;
use crate::instances;
use crate::linalg::Vector;
use crate::parallel::{self, Execution};
use crate::pdmm::{IterationTrace, Pdmm, PdmmConfig, StopRule, TraceReference};
use crate::problem::{assemble_c, assemble_p, NodeObjective, ProblemInstance};

pub const MAX_GRAPH_TRIES: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnormReport {
    pub p: u32,
    pub rho: f64,
    pub rho_mode: RhoMode,
    pub final_primal_sq_error: Option<f64>,
    pub f_star: Option<f64>,
    pub spectral: Option<SpectralReport>,
    pub g_hat_source: Option<GHatSource>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PnormRun {
    pub report: PnormReport,
    pub trace: IterationTrace,
    pub x_star: Option<Vector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: u32,
    pub rho: f64,
    /// Iterations until the auxiliary error first reached the tolerance.
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PnormOutcome {
    pub graph: Graph,
    pub graph_seed: u64,
    pub skipped_seeds: Vec<u64>,
    pub runs: Vec<PnormRun>,
    pub sweep: Vec<SweepPoint>,
}

/// Graph and per-node centres shared by every `p`.
pub fn instance(cfg: &ExperimentConfig) -> Result<(Graph, u64, Vec<u64>, Vec<Vector>)> {
    let (graph, used, skipped) = instances::connected_er(cfg.n_nodes, cfg.probability(), cfg.seed, MAX_GRAPH_TRIES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let centres = (0..cfg.n_nodes).map(|_| instances::random_vector(cfg.node_dim, &mut rng)).collect();
    Ok((graph, used, skipped, centres))
}

pub fn problem_for(graph: &Graph, centres: &[Vector], p: u32) -> Result<ProblemInstance> {
    let objectives = centres.iter().map(|a| NodeObjective::PNormPower { p, a: a.clone() }).collect();
    ProblemInstance::consensus(graph.clone(), objectives)
}

/// `ρ*` from the spectrum of `C` and the local curvature at `x*`, with the
/// matching report. `None` when the graph has no edges.
/// Step size from the curvature of the objective around `x_star`.
///
/// p-th powers are flat near their centres, so the smallest local curvature
/// is close to zero and the extreme-based step size collapses. This uses the
/// optimal-ρ formula with `μ = β = h̄`, the mean second derivative over all
/// nodes and coordinates at `x_star`.
pub fn curvature_rho(prob: &ProblemInstance, x_star: &Vector) -> Result<Option<f64>> {
    if prob.layout.m_e == 0 {
        return Ok(None);
    }
    let Some(h_mean) = analysis::pnorm_mean_curvature_at(prob, x_star) else {
        return Ok(None);
    };
    let (smax, smin) = analysis::singular_extremes(&assemble_c(prob)?)?;
    Ok(Some(analysis::optimal_rho(h_mean, h_mean, smax, smin).rho_star))
}

/// Spectral report with the local curvature extremes at `x_star`.
pub fn local_spectral(prob: &ProblemInstance, x_star: &Vector, rho: f64) -> Result<Option<SpectralReport>> {
    if prob.layout.m_e == 0 {
        return Ok(None);
    }
    let Some((mu, beta)) = analysis::pnorm_curvature_at(prob, x_star) else {
        return Ok(None);
    };
    let mu = mu.max(f64::MIN_POSITIVE);
    SpectralReport::compute(&assemble_c(prob)?, &assemble_p(&prob.layout), mu, beta, Some(rho)).map(Some)
}

fn reference(prob: &ProblemInstance, rho: f64, x_star: &Vector) -> Result<(TraceReference, Option<GHatSource>)> {
    let f_star = Some(prob.objective_value(x_star));
    if prob.layout.m_e == 0 {
        return Ok((TraceReference { z_tilde: None, x_star: Some(x_star.clone()), f_star }, None));
    }
    let r = analysis::reference_point(prob, rho, x_star, &Vector::zeros(prob.layout.m_e))?;
    Ok((r.trace_reference(f_star), Some(r.g_hat_source)))
}

fn run_one(cfg: &ExperimentConfig, graph: &Graph, centres: &[Vector], p: u32) -> PnormRun {
    let mut report = PnormReport {
        p,
        rho: cfg.fixed_rho(),
        rho_mode: cfg.rho_mode(),
        final_primal_sq_error: None,
        f_star: None,
        spectral: None,
        g_hat_source: None,
        error: None,
    };
    let mut x_out = None;
    let result = (|| -> Result<IterationTrace> {
        let prob = problem_for(graph, centres, p)?;
        let x_star = analysis::centralized_oracle(&prob)?;
        x_out = Some(x_star.clone());
        report.f_star = Some(prob.objective_value(&x_star));
        if cfg.rho_mode() == RhoMode::Optimal {
            if let Some(rho) = curvature_rho(&prob, &x_star)? {
                report.rho = rho;
            }
        }
        report.spectral = local_spectral(&prob, &x_star, report.rho)?;
        let (tr, source) = reference(&prob, report.rho, &x_star)?;
        report.g_hat_source = source;
        let engine = Pdmm::new(&prob, report.rho)?;
        let (_, trace) = engine.run(&PdmmConfig::new(report.rho, cfg.iterations()), &Vector::zeros(prob.layout.m_e), Some(&tr))?;
        report.final_primal_sq_error = trace.last().and_then(|r| r.primal_sq_error);
        Ok(trace)
    })();
    let trace = match result {
        Ok(t) => t,
        Err(e) => {
            log::error!("p = {p}: {e}");
            report.error = Some(e.to_string());
            IterationTrace::default()
        }
    };
    PnormRun { report, trace, x_star: x_out }
}

/// Log-spaced grid of `points` step sizes over `[centre/span, centre·span]`.
pub fn rho_grid(centre: f64, span: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![centre];
    }
    let (lo, hi) = ((centre / span).ln(), (centre * span).ln());
    (0..points).map(|k| (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp()).collect()
}

/// Iterations until the parity-matched auxiliary error is at most `tol`.
pub fn iterations_to_precision(prob: &ProblemInstance, rho: f64, x_star: &Vector, tol: f64, cap: usize) -> Result<Option<usize>> {
    let (tr, _) = reference(prob, rho, x_star)?;
    if tr.z_tilde.is_none() {
        return Ok(Some(1));
    }
    let cfg = PdmmConfig::new(rho, cap).with_stop(StopRule::AuxError, tol);
    let (_, trace) = Pdmm::new(prob, rho)?.run(&cfg, &Vector::zeros(prob.layout.m_e), Some(&tr))?;
    Ok(trace.last().filter(|r| r.aux_error().is_some_and(|e| e <= tol)).map(|r| r.k))
}

pub fn run_pnorm_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<PnormOutcome> {
    cfg.validate()?;
    let (graph, graph_seed, skipped_seeds, centres) = instance(cfg)?;
    if !skipped_seeds.is_empty() {
        log::info!("skipped {} disconnected graph seeds", skipped_seeds.len());
    }
    let runs = parallel::map(exec, &cfg.p_values, |&p| run_one(cfg, &graph, &centres, p));

    let mut sweep = Vec::new();
    if cfg.rho_sweep {
        let mut jobs = Vec::new();
        for run in &runs {
            let Some(x_star) = &run.x_star else { continue };
            if run.report.error.is_some() {
                continue;
            }
            for rho in rho_grid(run.report.rho, cfg.rho_sweep_span, cfg.rho_sweep_points) {
                jobs.push((run.report.p, rho, x_star.clone()));
            }
        }
        sweep = parallel::map(exec, &jobs, |(p, rho, x_star)| {
            let iterations = problem_for(&graph, &centres, *p)
                .and_then(|prob| iterations_to_precision(&prob, *rho, x_star, cfg.sweep_tol, cfg.sweep_max_iter))
                .unwrap_or_else(|e| {
                    log::error!("sweep p = {p}, rho = {rho}: {e}");
                    None
                });
            SweepPoint { p: *p, rho: *rho, iterations }
        });
    }
    Ok(PnormOutcome { graph, graph_seed, skipped_seeds, runs, sweep })
}

impl PnormOutcome {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut out = Vec::new();
        for run in &self.runs {
            let p = run.report.p;
            out.push(Artifact::new(format!("trace_pnorm_p{p}.csv"), run.trace.to_csv()));
            out.push(Artifact::json(format!("report_p{p}.json"), &run.report)?);
        }
        if !self.sweep.is_empty() {
            let mut csv = String::from("p,rho,iterations\n");
            for s in &self.sweep {
                let it = s.iterations.map(|k| k.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{:e},{}\n", s.p, s.rho, it));
            }
            out.push(Artifact::new("sweep_pnorm.csv", csv));
        }
        Ok(out)
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "graph_seed": self.graph_seed,
            "skipped_seeds": self.skipped_seeds,
            "edges": self.graph.n_edges(),
            "final_primal_sq_error": self.runs.iter().map(|r| (r.report.p.to_string(), r.report.final_primal_sq_error)).collect::<std::collections::BTreeMap<_, _>>(),
            "failed": self.runs.iter().filter(|r| r.report.error.is_some()).map(|r| r.report.p).collect::<Vec<_>>(),
            "sweep_unconverged": self.sweep.iter().filter(|s| s.iterations.is_none()).count(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::ExperimentKind;

    #[test]
    fn grid_is_log_spaced() {
        let g = rho_grid(2.0, 30.0, 25);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 2.0 / 30.0).abs() < 1e-12 && (g[24] - 60.0).abs() < 1e-10);
        assert!((g[12] - 2.0).abs() < 1e-12);
        let r: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(r.iter().all(|x| (x - r[0]).abs() < 1e-12));
    }

    #[test]
    fn single_node_is_exact_after_one_step() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::PnormSweep);
        cfg.n_nodes = 1;
        cfg.p_values = vec![3, 6];
        cfg.iterations = Some(1);
        let out = run_pnorm_sweep(&cfg, Execution::Sequential).unwrap();
        for run in &out.runs {
            assert_eq!(run.trace.len(), 1);
            assert_eq!(run.report.final_primal_sq_error, Some(0.0));
        }
    }

    #[test]
    fn small_instance_converges() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::PnormSweep);
        cfg.n_nodes = 5;
        cfg.p_values = vec![3, 4];
        let out = run_pnorm_sweep(&cfg, Execution::Sequential).unwrap();
        for run in &out.runs {
            assert_eq!(run.trace.len(), 180);
            assert!(run.report.final_primal_sq_error.unwrap() < 1e-6, "{:?}", run.report);
        }
    }
}
