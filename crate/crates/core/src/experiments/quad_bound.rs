//! Quadratic consensus instances built to share one geometric rate bound,
//! and the check of every auxiliary error against it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Z0Scaling};
use super::output::Artifact;
use crate::analysis::{self, SpectralReport};
use crate::error::{PdmmError, Result};
use crate::graph::Graph;
use crate::instances;
use crate::linalg::{Mat, Vector};
use crate::parallel::{self, Execution};
use crate::pdmm::{IterationTrace, Pdmm, PdmmConfig};
use crate::problem::{assemble_c, assemble_p, build_consensus_constraints, EdgeLayout, NodeObjective, ProblemInstance};

/// Relative slack on the geometric bound.
pub const BOUND_SLACK: f64 = 1e-8;
/// Absolute slack on the even-subsequence monotonicity check.
pub const FEJER_SLACK: f64 = 1e-10;
/// Squared errors below this are at the rounding floor and not compared.
pub const ROUNDOFF_FLOOR: f64 = 1e-24;
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub k: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadInstanceReport {
    pub index: usize,
    pub graph_seed: u64,
    pub edges: usize,
    /// Graph draws rejected before this one, with reasons.
    pub rejected: Vec<String>,
    pub spectral: SpectralReport,
    /// Target `δ` from the bisection.
    pub delta_target: f64,
    /// `‖z⁰ − z̃₀‖² / γ`, the constant of the auxiliary bound `γᵏ·c`.
    pub aux_scale: f64,
    pub bound_violations: Vec<BoundViolation>,
    pub fejer_violations: Vec<BoundViolation>,
    /// Violations of `‖x⁽ᵏ⁺¹⁾ − x*‖² ≤ σ_max²/(ρσ_min≠0²)·‖z⁽ᵏ⁾ − z̃₀‖²`, even `k`.
    pub primal_violations: Vec<BoundViolation>,
    /// `‖z⁰ − z̃₀‖²`.
    pub initial_aux_error: f64,
}

#[derive(Debug, Clone)]
pub struct QuadInstance {
    pub report: QuadInstanceReport,
    pub trace: IterationTrace,
    pub problem: ProblemInstance,
    pub z0: Vector,
}

#[derive(Debug, Clone)]
pub struct QuadOutcome {
    pub instances: Vec<QuadInstance>,
    pub failures: Vec<(usize, String)>,
}

/// Designed constants for one graph.
struct Design {
    spectral: SpectralReport,
    delta: f64,
}

fn design(graph: &Graph, dim: usize, gamma: f64) -> Result<(Design, Mat, Mat)> {
    let constraints = build_consensus_constraints(graph, dim);
    let layout = EdgeLayout::new(graph, &vec![dim; graph.n_nodes()], &vec![dim; graph.n_edges()]);
    let placeholder: Vec<_> = (0..graph.n_nodes())
        .map(|_| NodeObjective::Quadratic { q_mat: Mat::identity(dim, dim), q: Vector::zeros(dim) })
        .collect();
    let shell = ProblemInstance::new(graph.clone(), placeholder, constraints)?;
    let c = assemble_c(&shell)?;
    let p = assemble_p(&layout);
    let (smax, smin) = analysis::singular_extremes(&c)?;
    let theta = analysis::friedrichs_angle(&c, &p)?;
    let delta = analysis::delta_for_gamma(gamma, theta)?;
    let sqrt_kappa = (1.0 + delta) / (1.0 - delta);
    let kappa = sqrt_kappa * sqrt_kappa;
    let mu = 1.0;
    let beta = kappa * mu * smin * smin / (smax * smax);
    if beta < mu {
        return Err(PdmmError::Degenerate(format!(
            "required beta {beta} is below mu = 1 (sigma ratio too large for gamma = {gamma})"
        )));
    }
    let spectral = SpectralReport::compute(&c, &p, mu, beta, None)?;
    Ok((Design { spectral, delta }, c, p))
}

/// Eigenvalues for every node inside `[μ, β]`, with both endpoints used.
fn node_spectra<R: Rng + ?Sized>(n: usize, dim: usize, mu: f64, beta: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut eigs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(mu..=beta)).collect()).collect();
    eigs[0][0] = mu;
    if dim >= 2 {
        eigs[0][1] = beta;
    } else {
        eigs[n - 1][0] = beta;
    }
    eigs
}

pub fn run_instance(cfg: &ExperimentConfig, index: usize) -> Result<QuadInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let dim = cfg.node_dim;
    let gamma = cfg.gamma_target;
    let mut rejected = Vec::new();
    let (graph, graph_seed, design, _c, p) = loop {
        if rejected.len() >= MAX_ATTEMPTS {
            return Err(PdmmError::Degenerate(format!("instance {index}: no usable graph in {MAX_ATTEMPTS} draws")));
        }
        let seed: u64 = rng.random::<u64>() >> 1;
        let (graph, used, skipped) = instances::connected_er(cfg.n_nodes, cfg.probability(), seed, 10_000)?;
        rejected.extend(skipped.iter().map(|s| format!("seed {s}: disconnected")));
        match design(&graph, dim, gamma) {
            Ok((d, c, p)) => break (graph, used, d, c, p),
            Err(e) => {
                log::info!("instance {index}: seed {used} rejected: {e}");
                rejected.push(format!("seed {used}: {e}"));
            }
        }
    };
    let spectral = design.spectral.clone();
    let (mu, beta, rho) = (spectral.mu, spectral.beta, spectral.rho_star);
    let objectives = node_spectra(graph.n_nodes(), dim, mu, beta, &mut rng)
        .into_iter()
        .map(|e| NodeObjective::Quadratic {
            q_mat: instances::spd_with_eigenvalues(&e, &mut rng),
            q: instances::random_vector(dim, &mut rng),
        })
        .collect();
    let prob = ProblemInstance::consensus(graph.clone(), objectives)?;
    let x_star = analysis::centralized_oracle(&prob)?;

    // z⁰ = z̃₀(w) + v with v in ran(C) + ran(PC), so z̃₀ does not move.
    let m_e = prob.layout.m_e;
    let w = instances::random_vector(m_e, &mut rng);
    let base = analysis::reference_point(&prob, rho, &x_star, &w)?;
    let c = assemble_c(&prob)?;
    let basis = analysis::joint_range_basis(&c, &p);
    let raw = instances::random_vector(m_e, &mut rng);
    let v = &basis * (basis.transpose() * raw);
    let target = match cfg.z0_scaling {
        Z0Scaling::AuxUnit => spectral.gamma,
        Z0Scaling::PrimalUnit => rho * spectral.sigma_min_nz.powi(2) * spectral.gamma / spectral.sigma_max.powi(2),
    };
    let z0 = &base.z_tilde_0 + v.normalize() * target.sqrt();
    let reference = analysis::reference_point(&prob, rho, &x_star, &z0)?;
    let mut spectral = spectral;
    spectral.epsilon = Some(analysis::epsilon_bound(&spectral, rho, &z0, &reference.z_tilde_0)?);
    let initial_aux_error = crate::linalg::dist_sq(&z0, &reference.z_tilde_0);
    let aux_scale = initial_aux_error / spectral.gamma;

    let tr = reference.trace_reference(Some(prob.objective_value(&x_star)));
    let (_, trace) = Pdmm::new(&prob, rho)?.run(&PdmmConfig::new(rho, cfg.iterations()), &z0, Some(&tr))?;

    let report = QuadInstanceReport {
        index,
        graph_seed,
        edges: graph.n_edges(),
        rejected,
        bound_violations: bound_violations(&trace, spectral.gamma, aux_scale),
        fejer_violations: fejer_violations(&trace, initial_aux_error),
        primal_violations: primal_violations(&trace, spectral.primal_factor(), initial_aux_error),
        spectral,
        delta_target: design.delta,
        aux_scale,
        initial_aux_error,
    };
    Ok(QuadInstance { report, trace, problem: prob, z0 })
}

/// Iterates with `‖z⁽ᵏ⁾ − z̃_{k mod 2}‖² > γᵏ·scale·(1 + 1e−8)`.
pub fn bound_violations(trace: &IterationTrace, gamma: f64, scale: f64) -> Vec<BoundViolation> {
    trace
        .records
        .iter()
        .filter_map(|r| {
            let value = r.aux_error()?;
            let bound = gamma.powi(r.k as i32) * scale;
            (value > bound * (1.0 + BOUND_SLACK)).then_some(BoundViolation { k: r.k, value, bound })
        })
        .collect()
}

/// Even iterates whose auxiliary error grew by more than [`FEJER_SLACK`].
pub fn fejer_violations(trace: &IterationTrace, initial: f64) -> Vec<BoundViolation> {
    let mut prev = initial;
    let mut out = Vec::new();
    for r in trace.records.iter().filter(|r| r.k % 2 == 0) {
        let Some(e) = r.aux_error_even_ref else { continue };
        if e > prev + FEJER_SLACK {
            out.push(BoundViolation { k: r.k, value: e, bound: prev });
        }
        prev = e;
    }
    out
}

/// Checks `‖x⁽ᵏ⁺¹⁾ − x*‖² ≤ factor·‖z⁽ᵏ⁾ − z̃₀‖²` for even `k`.
pub fn primal_violations(trace: &IterationTrace, factor: f64, initial: f64) -> Vec<BoundViolation> {
    let aux_even = |k: usize| -> Option<f64> {
        if k == 0 { Some(initial) } else { trace.records.get(k - 1).and_then(|r| r.aux_error_even_ref) }
    };
    trace
        .records
        .iter()
        .filter(|r| (r.k - 1) % 2 == 0)
        .filter_map(|r| {
            let value = r.primal_sq_error?;
            let bound = factor * aux_even(r.k - 1)?;
            (value > bound * (1.0 + BOUND_SLACK) && value > ROUNDOFF_FLOOR)
                .then_some(BoundViolation { k: r.k - 1, value, bound })
        })
        .collect()
}

pub fn run_quadratic_bound(cfg: &ExperimentConfig, exec: Execution) -> Result<QuadOutcome> {
    cfg.validate()?;
    let results = parallel::map_range(exec, cfg.n_instances, |i| run_instance(cfg, i));
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(inst) => instances.push(inst),
            Err(e) => {
                log::warn!("instance {i} skipped: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    Ok(QuadOutcome { instances, failures })
}

impl QuadOutcome {
    pub fn total_bound_violations(&self) -> usize {
        self.instances.iter().map(|i| i.report.bound_violations.len()).sum()
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut out = Vec::new();
        for inst in &self.instances {
            let i = inst.report.index;
            out.push(Artifact::new(format!("trace_quad_{i}.csv"), inst.trace.to_csv()));
            out.push(Artifact::json(format!("report_{i}.json"), &inst.report)?);
        }
        Ok(out)
    }

    pub fn summary(&self) -> serde_json::Value {
        let worst = self
            .instances
            .iter()
            .flat_map(|i| i.report.bound_violations.iter().map(move |v| (i.report.index, v)))
            .max_by(|a, b| (a.1.value / a.1.bound).total_cmp(&(b.1.value / b.1.bound)))
            .map(|(i, v)| serde_json::json!({ "instance": i, "k": v.k, "ratio": v.value / v.bound }));
        serde_json::json!({
            "instances": self.instances.len(),
            "skipped": self.failures,
            "bound_violations": self.total_bound_violations(),
            "instances_with_bound_violations": self.instances.iter().filter(|i| !i.report.bound_violations.is_empty()).count(),
            "fejer_violations": self.instances.iter().map(|i| i.report.fejer_violations.len()).sum::<usize>(),
            "primal_violations": self.instances.iter().map(|i| i.report.primal_violations.len()).sum::<usize>(),
            "worst_bound_violation": worst,
        })
    }
}
