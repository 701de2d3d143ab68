//! The PDMM operator `T_P = P ∘ R_1` and its iteration variants.
//!
//! One application from auxiliary vector `z`:
//!
//! ```text
//! x  = argmin f(x) − ⟨Cᵀz, x⟩ + ρ/2 ‖Cx − d‖²     (node-local)
//! λ  = z − ρ(Cx − d)
//! y  = 2λ − z
//! z⁺ = P y                                          (exchange with neighbors)
//! ```
//!
//! Averaging with weight `α` gives `(1−α)z + α T_P z`; `α = ½` is ADMM.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{PdmmError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::local::NodeUpdater;
use crate::problem::{assemble_c, assemble_d, EdgeLayout, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    #[default]
    None,
    /// Stop once the parity-matched auxiliary error is at most `tol`.
    AuxError,
    /// Stop once `(f(x) − f*)²` is at most `tol`.
    ObjectiveSubopt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmmConfig {
    pub rho: f64,
    /// `1` is plain PDMM, `½` is ADMM.
    pub alpha: f64,
    pub max_iter: usize,
    pub stop_rule: StopRule,
    pub tol: f64,
    /// Keep every `z` and `x` iterate in the trace.
    pub keep_iterates: bool,
}

impl PdmmConfig {
    pub fn new(rho: f64, max_iter: usize) -> Self {
        PdmmConfig { rho, alpha: 1.0, max_iter, stop_rule: StopRule::None, tol: 0.0, keep_iterates: false }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_stop(mut self, rule: StopRule, tol: f64) -> Self {
        self.stop_rule = rule;
        self.tol = tol;
        self
    }

    pub fn keeping_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(PdmmError::Parameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(PdmmError::Parameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdmmState {
    pub z: Vector,
    pub x: Vector,
    pub lambda: Vector,
    pub y: Vector,
    pub k: usize,
}

impl PdmmState {
    pub fn initial(layout: &EdgeLayout, z0: Vector) -> Self {
        PdmmState {
            z: z0,
            x: Vector::zeros(layout.m_v),
            lambda: Vector::zeros(layout.m_e),
            y: Vector::zeros(layout.m_e),
            k: 0,
        }
    }
}

/// Output of the reflected resolvent `R_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub x: Vector,
    pub lambda: Vector,
    pub y: Vector,
}

/// Optimal quantities used for error metrics and stopping.
#[derive(Debug, Clone, Default)]
pub struct TraceReference {
    /// `(z̃₀, z̃₁)` for even / odd iterations.
    pub z_tilde: Option<(Vector, Vector)>,
    pub x_star: Option<Vector>,
    pub f_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub aux_error_even_ref: Option<f64>,
    pub aux_error_odd_ref: Option<f64>,
    pub primal_sq_error: Option<f64>,
    pub objective_subopt: Option<f64>,
    pub objective: f64,
    /// `‖T_P z⁽ᵏ⁾ − z⁽ᵏ⁾‖²`
    pub fp_residual_sq: f64,
}

impl IterationRecord {
    /// Auxiliary error against `z̃₀` for even `k`, `z̃₁` for odd `k`.
    pub fn aux_error(&self) -> Option<f64> {
        if self.k.is_multiple_of(2) { self.aux_error_even_ref } else { self.aux_error_odd_ref }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// `z⁽¹⁾, z⁽²⁾, …` when iterates are kept.
    pub z_iterates: Vec<Vector>,
    /// `x⁽¹⁾, x⁽²⁾, …` when iterates are kept.
    pub x_iterates: Vec<Vector>,
}

pub const CSV_HEADER: &str = "k,aux_error_even_ref,aux_error_odd_ref,primal_sq_error,objective_subopt,fp_residual_sq";

fn csv_field(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v:e}");
    }
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.k);
            csv_field(&mut out, r.aux_error_even_ref);
            csv_field(&mut out, r.aux_error_odd_ref);
            csv_field(&mut out, r.primal_sq_error);
            csv_field(&mut out, r.objective_subopt);
            csv_field(&mut out, Some(r.fp_residual_sq));
            out.push('\n');
        }
        out
    }
}

/// Matrix-form PDMM engine for one problem and step size.
pub struct Pdmm<'a> {
    prob: &'a ProblemInstance,
    rho: f64,
    c: Mat,
    d: Vector,
    updaters: Vec<NodeUpdater>,
}

impl<'a> Pdmm<'a> {
    pub fn new(prob: &'a ProblemInstance, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(PdmmError::Parameter(format!("rho must be positive, got {rho}")));
        }
        let c = assemble_c(prob)?;
        let d = assemble_d(prob);
        let updaters = (0..prob.n_nodes())
            .map(|i| NodeUpdater::for_node(prob, i, rho))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pdmm { prob, rho, c, d, updaters })
    }

    pub fn problem(&self) -> &ProblemInstance {
        self.prob
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn d(&self) -> &Vector {
        &self.d
    }

    fn check_len(&self, v: &Vector, what: &str) -> Result<()> {
        if v.len() != self.prob.layout.m_e {
            return Err(PdmmError::Parameter(format!(
                "{what} has length {}, layout needs {}",
                v.len(),
                self.prob.layout.m_e
            )));
        }
        Ok(())
    }

    /// Node-wise primal update for the given auxiliary vector.
    pub fn primal(&self, z: &Vector) -> Result<Vector> {
        let layout = &self.prob.layout;
        let mut x = Vector::zeros(layout.m_v);
        for (i, upd) in self.updaters.iter().enumerate() {
            let zi = z.rows_range(layout.node_rows(i)).into_owned();
            let xi = upd.solve(&zi)?;
            x.rows_range_mut(layout.node_range(i)).copy_from(&xi);
        }
        Ok(x)
    }

    /// `R_1(z)` with its primal and dual by-products.
    pub fn reflect_t1(&self, z: &Vector) -> Result<Reflection> {
        self.check_len(z, "z")?;
        let x = self.primal(z)?;
        let cx = linalg::matvec(&self.c, &x);
        let rho = self.rho;
        let lambda = Vector::from_fn(z.len(), |r, _| z[r] - rho * (cx[r] - self.d[r]));
        let y = Vector::from_fn(z.len(), |r, _| 2.0 * lambda[r] - z[r]);
        Ok(Reflection { x, lambda, y })
    }

    pub fn exchange(&self, y: &Vector) -> Vector {
        exchange(&self.prob.layout, y)
    }

    /// `T_P z`.
    pub fn apply(&self, z: &Vector) -> Result<Vector> {
        Ok(self.exchange(&self.reflect_t1(z)?.y))
    }

    /// ADMM operator `T_A z = ½(z + T_P z)`.
    pub fn apply_admm(&self, z: &Vector) -> Result<Vector> {
        let tz = self.apply(z)?;
        Ok((z + tz) * 0.5)
    }

    /// `‖T_P z − z‖²`.
    pub fn fixed_point_residual_sq(&self, z: &Vector) -> Result<f64> {
        Ok(linalg::dist_sq(&self.apply(z)?, z))
    }

    /// One averaged step; also returns `T_P z` of the incoming state.
    pub fn step_with_image(&self, alpha: f64, state: &PdmmState) -> Result<(PdmmState, Vector)> {
        let Reflection { x, lambda, y } = self.reflect_t1(&state.z)?;
        let tz = self.exchange(&y);
        let z = if alpha == 1.0 { tz.clone() } else { (1.0 - alpha) * &state.z + alpha * &tz };
        Ok((PdmmState { z, x, lambda, y, k: state.k + 1 }, tz))
    }

    pub fn step(&self, alpha: f64, state: &PdmmState) -> Result<PdmmState> {
        Ok(self.step_with_image(alpha, state)?.0)
    }

    fn record(&self, state: &PdmmState, reference: Option<&TraceReference>) -> IterationRecord {
        crate::analysis::error_metrics(self.prob, state.k, &state.z, &state.x, reference)
    }

    /// Runs up to `cfg.max_iter` averaged steps from `z0`.
    pub fn run(&self, cfg: &PdmmConfig, z0: &Vector, reference: Option<&TraceReference>) -> Result<(PdmmState, IterationTrace)> {
        cfg.validate()?;
        self.check_len(z0, "z0")?;
        match cfg.stop_rule {
            StopRule::AuxError if reference.and_then(|r| r.z_tilde.as_ref()).is_none() => {
                return Err(PdmmError::Parameter("aux-error stopping needs reference points".into()))
            }
            StopRule::ObjectiveSubopt if reference.and_then(|r| r.f_star).is_none() => {
                return Err(PdmmError::Parameter("objective stopping needs f*".into()))
            }
            _ => {}
        }
        let mut state = PdmmState::initial(&self.prob.layout, z0.clone());
        let mut trace = IterationTrace::default();
        while state.k < cfg.max_iter {
            let (next, tz) = self.step_with_image(cfg.alpha, &state)?;
            if let Some(prev) = trace.records.last_mut() {
                prev.fp_residual_sq = linalg::dist_sq(&tz, &state.z);
            }
            state = next;
            let rec = self.record(&state, reference);
            let stop = match cfg.stop_rule {
                StopRule::None => false,
                StopRule::AuxError => rec.aux_error().is_some_and(|e| e <= cfg.tol),
                StopRule::ObjectiveSubopt => rec.objective_subopt.is_some_and(|e| e <= cfg.tol),
            };
            trace.records.push(rec);
            if cfg.keep_iterates {
                trace.z_iterates.push(state.z.clone());
                trace.x_iterates.push(state.x.clone());
            }
            if stop {
                break;
            }
        }
        if let Some(last) = trace.records.last_mut() {
            last.fp_residual_sq = self.fixed_point_residual_sq(&state.z)?;
        }
        Ok((state, trace))
    }

    /// Simplified λ/x recursion. Returns `x⁽¹⁾, …, x⁽ᴷ⁾` and the final `λ`.
    pub fn run_lambda_form(&self, iterations: usize, lambda0: &Vector, x0: &Vector) -> Result<(Vec<Vector>, Vector)> {
        self.check_len(lambda0, "lambda0")?;
        let layout = &self.prob.layout;
        let rho = self.rho;
        let mut lambda = lambda0.clone();
        let mut x = x0.clone();
        let mut xs = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let p_lambda = layout.permute(&lambda);
            let pcx_old = layout.permute(&linalg::matvec(&self.c, &x));
            // linear term −⟨CᵀPλ, x⟩ + ρ⟨Cx, PCx_old − 2d⟩ written in node-update form
            let z_eff = Vector::from_fn(lambda.len(), |r, _| p_lambda[r] - rho * (pcx_old[r] - self.d[r]));
            let x_new = self.primal(&z_eff)?;
            let cx_new = linalg::matvec(&self.c, &x_new);
            lambda = Vector::from_fn(lambda.len(), |r, _| {
                p_lambda[r] - rho * (cx_new[r] + pcx_old[r] - 2.0 * self.d[r])
            });
            x = x_new;
            xs.push(x.clone());
        }
        Ok((xs, lambda))
    }

    /// Auxiliary start matching a λ-form start `(λ⁰, x⁰)`:
    /// `z⁰ = P(λ⁰ − ρ(Cx⁰ − d))`.
    pub fn matched_z0(&self, lambda0: &Vector, x0: &Vector) -> Vector {
        let cx = linalg::matvec(&self.c, x0);
        let inner = Vector::from_fn(lambda0.len(), |r, _| lambda0[r] - self.rho * (cx[r] - self.d[r]));
        self.prob.layout.permute(&inner)
    }
}

/// `P y`: block `(i|j)` of the result is block `(j|i)` of `y`.
pub fn exchange(layout: &EdgeLayout, y: &Vector) -> Vector {
    layout.permute(y)
}

pub fn reflect_t1(prob: &ProblemInstance, rho: f64, z: &Vector) -> Result<Reflection> {
    Pdmm::new(prob, rho)?.reflect_t1(z)
}

pub fn pdmm_step(prob: &ProblemInstance, cfg: &PdmmConfig, state: &PdmmState) -> Result<PdmmState> {
    cfg.validate()?;
    Pdmm::new(prob, cfg.rho)?.step(cfg.alpha, state)
}

pub fn run(
    prob: &ProblemInstance,
    cfg: &PdmmConfig,
    z0: &Vector,
    reference: Option<&TraceReference>,
) -> Result<(PdmmState, IterationTrace)> {
    Pdmm::new(prob, cfg.rho)?.run(cfg, z0, reference)
}

pub fn run_lambda_form(prob: &ProblemInstance, cfg: &PdmmConfig, lambda0: &Vector, x0: &Vector) -> Result<Vec<Vector>> {
    Ok(Pdmm::new(prob, cfg.rho)?.run_lambda_form(cfg.max_iter, lambda0, x0)?.0)
}

// ---- node-message simulation ----------------------------------------------

/// One-way transmission of a half-step auxiliary block over a directed edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub iteration: usize,
    pub sender: usize,
    pub receiver: usize,
    /// Undirected edge index in [`crate::graph::Graph::edges`].
    pub edge: usize,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn count_in_iteration(&self, k: usize) -> usize {
        self.messages.iter().filter(|m| m.iteration == k).count()
    }

    pub fn sent_by(&self, node: usize, k: usize) -> usize {
        self.messages.iter().filter(|m| m.iteration == k && m.sender == node).count()
    }
}

struct SimNode {
    id: usize,
    neighbors: Vec<usize>,
    updater: NodeUpdater,
    /// `z_{i|j}` per neighbor, in neighbor order.
    z: Vec<Vector>,
    /// `A_{i|j}` per neighbor.
    a: Vec<Mat>,
    /// `b_ij / 2` per neighbor.
    half_b: Vec<Vector>,
    x: Vector,
    lambda: Vec<Vector>,
    half: Vec<Vector>,
}

impl SimNode {
    fn stacked_z(&self) -> Vector {
        let total: usize = self.z.iter().map(|v| v.len()).sum();
        let mut out = Vector::zeros(total);
        let mut at = 0;
        for v in &self.z {
            out.rows_mut(at, v.len()).copy_from(v);
            at += v.len();
        }
        out
    }

    /// Primal update, then per-neighbor dual and half-step updates.
    fn local_update(&mut self, rho: f64) -> Result<()> {
        self.x = self.updater.solve(&self.stacked_z())?;
        for n in 0..self.neighbors.len() {
            let ax = linalg::matvec(&self.a[n], &self.x);
            let (z, hb) = (&self.z[n], &self.half_b[n]);
            let lambda = Vector::from_fn(z.len(), |r, _| z[r] - rho * (ax[r] - hb[r]));
            self.half[n] = Vector::from_fn(z.len(), |r, _| 2.0 * lambda[r] - z[r]);
            self.lambda[n] = lambda;
        }
        Ok(())
    }
}

/// Runs plain PDMM as independent nodes exchanging one-way messages.
/// Only `cfg.rho` and `cfg.max_iter` are used.
pub fn run_distributed_sim(prob: &ProblemInstance, cfg: &PdmmConfig, z0: &Vector) -> Result<(PdmmState, Transcript)> {
    cfg.validate()?;
    let layout = &prob.layout;
    if z0.len() != layout.m_e {
        return Err(PdmmError::Parameter("z0 does not match the edge layout".into()));
    }
    let rho = cfg.rho;
    let mut nodes = (0..prob.n_nodes())
        .map(|i| {
            let neighbors = prob.graph.neighbors(i).to_vec();
            let blocks: Vec<_> = layout.directed[layout.node_edges[i].clone()].to_vec();
            Ok(SimNode {
                id: i,
                updater: NodeUpdater::for_node(prob, i, rho)?,
                z: blocks.iter().map(|e| z0.rows(e.offset, e.size).into_owned()).collect(),
                a: neighbors.iter().map(|&j| prob.a_dir(i, j).clone()).collect(),
                half_b: neighbors.iter().map(|&j| prob.b_edge(i, j) * 0.5).collect(),
                x: Vector::zeros(layout.node_dims[i]),
                lambda: blocks.iter().map(|e| Vector::zeros(e.size)).collect(),
                half: blocks.iter().map(|e| Vector::zeros(e.size)).collect(),
                neighbors,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut transcript = Transcript::default();
    for k in 0..cfg.max_iter {
        for node in nodes.iter_mut() {
            node.local_update(rho)?;
        }
        let mut inbox: Vec<Message> = Vec::with_capacity(layout.directed.len());
        for node in &nodes {
            for (n, &j) in node.neighbors.iter().enumerate() {
                let edge = prob.graph.edges().binary_search(&(node.id.min(j), node.id.max(j))).expect("edge");
                inbox.push(Message {
                    iteration: k,
                    sender: node.id,
                    receiver: j,
                    edge,
                    payload: node.half[n].iter().copied().collect(),
                });
            }
        }
        for msg in &inbox {
            let node = &mut nodes[msg.receiver];
            let slot = node.neighbors.binary_search(&msg.sender).expect("sender is a neighbor");
            node.z[slot] = Vector::from_column_slice(&msg.payload);
        }
        transcript.messages.extend(inbox);
    }

    let mut state = PdmmState::initial(layout, Vector::zeros(layout.m_e));
    state.k = cfg.max_iter;
    for node in &nodes {
        let i = node.id;
        state.x.rows_range_mut(layout.node_range(i)).copy_from(&node.x);
        for (n, e) in layout.directed[layout.node_edges[i].clone()].iter().enumerate() {
            state.z.rows_mut(e.offset, e.size).copy_from(&node.z[n]);
            state.lambda.rows_mut(e.offset, e.size).copy_from(&node.lambda[n]);
            state.y.rows_mut(e.offset, e.size).copy_from(&node.half[n]);
        }
    }
    Ok((state, transcript))
}
