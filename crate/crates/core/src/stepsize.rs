//! Distributed step-size selection by min/max diffusion.
//!
//! Each node starts from the singular-value extremes of its own block `C_i`
//! and its curvature constants. In every round a node replaces each value
//! with the max (`σ_max`, `β`) or min (`σ_min≠0`, `μ`) over itself and its
//! neighbors. After `D` rounds (the graph diameter) every node holds the
//! global extremes and computes the same `ρ*`.

use serde::{Deserialize, Serialize};

use crate::analysis::{self, optimal_rho};
use crate::error::{PdmmError, Result};
use crate::graph::Graph;
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeEstimates {
    pub sigma_max: f64,
    pub sigma_min_nz: f64,
    pub mu: f64,
    pub beta: f64,
}

impl NodeEstimates {
    /// Merges another node's values into this one.
    fn absorb(&mut self, other: &NodeEstimates) {
        self.sigma_max = self.sigma_max.max(other.sigma_max);
        self.sigma_min_nz = self.sigma_min_nz.min(other.sigma_min_nz);
        self.mu = self.mu.min(other.mu);
        self.beta = self.beta.max(other.beta);
    }

    pub fn rho_star(&self) -> f64 {
        optimal_rho(self.mu, self.beta, self.sigma_max, self.sigma_min_nz).rho_star
    }
}

/// Local values of node `i`: extremes of `σ(C_i)` and, for a quadratic,
/// the extreme eigenvalues of `Q_i`.
pub fn local_init(prob: &ProblemInstance, i: usize) -> Result<NodeEstimates> {
    let (mu, beta) = prob.objectives[i]
        .curvature_bounds()
        .ok_or_else(|| PdmmError::Parameter(format!("node {i}: curvature constants need a quadratic objective")))?;
    local_init_with(prob, i, mu, beta)
}

/// Like [`local_init`] with caller-supplied curvature constants.
pub fn local_init_with(prob: &ProblemInstance, i: usize, mu: f64, beta: f64) -> Result<NodeEstimates> {
    let block = prob.node_block(i)?;
    let (sigma_max, sigma_min_nz) = analysis::singular_extremes(&block)
        .map_err(|_| PdmmError::Degenerate(format!("node {i} has a zero constraint block")))?;
    Ok(NodeEstimates { sigma_max, sigma_min_nz, mu, beta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionRound {
    pub round: usize,
    /// Values held after this round.
    pub estimates: Vec<NodeEstimates>,
    /// Messages sent by each node this round.
    pub transmissions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionResult {
    pub estimates: Vec<NodeEstimates>,
    pub rho_star: Vec<f64>,
    pub rounds: Vec<DiffusionRound>,
    pub warning: Option<String>,
}

impl DiffusionResult {
    pub fn total_transmissions(&self) -> usize {
        self.rounds.iter().flat_map(|r| r.transmissions.iter()).sum()
    }
}

/// Runs `rounds` synchronous rounds. Fewer rounds than the diameter is
/// allowed but logged and reported, since the result may not be global.
pub fn diffuse(graph: &Graph, init: &[NodeEstimates], rounds: usize) -> Result<DiffusionResult> {
    if init.len() != graph.n_nodes() {
        return Err(PdmmError::Parameter(format!(
            "{} estimates for {} nodes",
            init.len(),
            graph.n_nodes()
        )));
    }
    let warning = match graph.diameter() {
        Ok(d) if rounds < d => Some(format!("{rounds} rounds is below the diameter {d}; estimates may not be global")),
        Ok(_) => None,
        Err(_) => Some("graph is disconnected; estimates cannot become global".to_string()),
    };
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let mut current = init.to_vec();
    let mut history = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let prev = current.clone();
        for (i, est) in current.iter_mut().enumerate() {
            for &j in graph.neighbors(i) {
                est.absorb(&prev[j]);
            }
        }
        history.push(DiffusionRound {
            round,
            estimates: current.clone(),
            transmissions: (0..graph.n_nodes()).map(|i| graph.degree(i)).collect(),
        });
    }
    let rho_star = current.iter().map(NodeEstimates::rho_star).collect();
    Ok(DiffusionResult { estimates: current, rho_star, rounds: history, warning })
}

/// Global extremes computed in one place, for comparison.
pub fn centralized(init: &[NodeEstimates]) -> Option<NodeEstimates> {
    let (first, rest) = init.split_first()?;
    let mut acc = *first;
    for e in rest {
        acc.absorb(e);
    }
    Some(acc)
}

/// Runs the protocol on a quadratic problem with `rounds` (default: the
/// diameter).
pub fn select_step_size(prob: &ProblemInstance, rounds: Option<usize>) -> Result<DiffusionResult> {
    let init = (0..prob.n_nodes()).map(|i| local_init(prob, i)).collect::<Result<Vec<_>>>()?;
    let rounds = match rounds {
        Some(r) => r,
        None => prob.graph.diameter()?,
    };
    diffuse(&prob.graph, &init, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::linalg::{Mat, Vector};
    use crate::problem::NodeObjective;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn est(s: f64) -> NodeEstimates {
        NodeEstimates { sigma_max: s, sigma_min_nz: s, mu: s, beta: s }
    }

    #[test]
    fn consensus_block_extremes_are_sqrt_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = instances::connected_er(8, 0.5, 0, 100).unwrap().0;
        let prob = instances::consensus_quadratic(g.clone(), 3, 1.0, 2.0, &mut rng).unwrap();
        for i in 0..8 {
            let e = local_init(&prob, i).unwrap();
            let m = (g.degree(i) as f64).sqrt();
            assert!((e.sigma_max - m).abs() < 1e-12 && (e.sigma_min_nz - m).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_curvature_and_scaling() {
        let g = Graph::path(2).unwrap();
        let q = |d: &[f64]| NodeObjective::Quadratic {
            q_mat: Mat::from_diagonal(&Vector::from_column_slice(d)),
            q: Vector::zeros(d.len()),
        };
        let prob = ProblemInstance::consensus(g.clone(), vec![q(&[1.0, 4.0]), q(&[2.0, 2.0])]).unwrap();
        let e = local_init(&prob, 0).unwrap();
        assert_eq!((e.mu, e.beta), (1.0, 4.0));

        let mut scaled = prob.clone();
        for c in scaled.constraints.iter_mut() {
            c.a_ij *= 2.0;
            c.a_ji *= 2.0;
        }
        let s = local_init(&scaled, 0).unwrap();
        assert!((s.sigma_max - 2.0 * e.sigma_max).abs() < 1e-14);
        assert!((s.sigma_min_nz - 2.0 * e.sigma_min_nz).abs() < 1e-14);
    }

    #[test]
    fn path_of_three_by_hand() {
        // round 1: (max(1,3), max(1,3,2), max(3,2)) = (3, 3, 3)
        let g = Graph::path(3).unwrap();
        let init: Vec<_> = [1.0, 3.0, 2.0]
            .iter()
            .map(|&s| NodeEstimates { sigma_max: s, sigma_min_nz: 1.0, mu: 1.0, beta: 1.0 })
            .collect();
        let r = diffuse(&g, &init, 2).unwrap();
        assert!(r.estimates.iter().all(|e| e.sigma_max == 3.0));
        assert_eq!(r.rounds[0].estimates.iter().map(|e| e.sigma_max).collect::<Vec<_>>(), vec![3.0, 3.0, 3.0]);
        assert_eq!(r.rounds[0].transmissions, vec![1, 2, 1]);
        assert_eq!(r.total_transmissions(), 2 * 2 * g.n_edges());
        assert!(r.warning.is_none());
    }

    #[test]
    fn min_values_spread_too() {
        let g = Graph::path(4).unwrap();
        let init = vec![est(5.0), est(2.0), est(7.0), est(1.0)];
        let r = diffuse(&g, &init, 3).unwrap();
        let c = centralized(&init).unwrap();
        for e in &r.estimates {
            assert_eq!(*e, c);
        }
        assert!(r.rho_star.iter().all(|&x| x == c.rho_star()));
    }

    #[test]
    fn short_runs_warn() {
        let g = Graph::path(4).unwrap();
        let r = diffuse(&g, &[est(1.0), est(2.0), est(3.0), est(4.0)], 1).unwrap();
        assert!(r.warning.is_some());
        assert_eq!(r.estimates[0].sigma_max, 2.0);
    }

    #[test]
    fn single_node_keeps_locals() {
        let g = Graph::empty(1).unwrap();
        let init = vec![NodeEstimates { sigma_max: 2.0, sigma_min_nz: 1.0, mu: 1.0, beta: 4.0 }];
        let r = diffuse(&g, &init, 0).unwrap();
        assert_eq!(r.estimates, init);
        assert_eq!(r.rho_star[0], 1.0);
    }

    #[test]
    fn complete_graph_needs_one_round() {
        let g = Graph::complete(5).unwrap();
        let init: Vec<_> = (0..5).map(|i| est(i as f64 + 1.0)).collect();
        let r = diffuse(&g, &init, 1).unwrap();
        assert!(r.estimates.iter().all(|e| *e == centralized(&init).unwrap()));
    }

    #[test]
    fn zero_block_is_degenerate() {
        let g = Graph::path(2).unwrap();
        let q = NodeObjective::Quadratic { q_mat: Mat::identity(1, 1), q: Vector::zeros(1) };
        let mut prob = ProblemInstance::consensus(g, vec![q.clone(), q]).unwrap();
        prob.constraints[0].a_ij = Mat::zeros(1, 1);
        assert!(matches!(local_init(&prob, 0), Err(PdmmError::Degenerate(_))));
    }
}
