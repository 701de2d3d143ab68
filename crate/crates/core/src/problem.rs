//! Node objectives, edge constraints and the stacked edge-space assembly.
//!
//! Every vector living on directed edges (`z`, `λ`, `y`, `d`, rows of `C`)
//! uses the same [`EdgeLayout`]: directed edges `(i|j)` ordered by `i` then
//! `j`, restricted to existing edges. Node-space vectors (`x`) are stacked by
//! node index.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{PdmmError, Result};
use crate::graph::Graph;
use crate::linalg::{self, Mat, Vector};

/// Local cost `f_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeObjective {
    /// `½ xᵀQx − qᵀx`
    Quadratic { q_mat: Mat, q: Vector },
    /// `‖x − a‖_p^p`
    PNormPower { p: u32, a: Vector },
    /// `‖x − a‖₁`
    L1 { a: Vector },
}

impl NodeObjective {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeObjective::Quadratic { .. } => "quadratic",
            NodeObjective::PNormPower { .. } => "pnorm",
            NodeObjective::L1 { .. } => "l1",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NodeObjective::Quadratic { q, .. } => q.len(),
            NodeObjective::PNormPower { a, .. } | NodeObjective::L1 { a } => a.len(),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            NodeObjective::Quadratic { q_mat, q } => 0.5 * x.dot(&(q_mat * x)) - q.dot(x),
            NodeObjective::PNormPower { p, a } => {
                x.iter().zip(a.iter()).map(|(xi, ai)| (xi - ai).abs().powi(*p as i32)).sum()
            }
            NodeObjective::L1 { a } => x.iter().zip(a.iter()).map(|(xi, ai)| (xi - ai).abs()).sum(),
        }
    }

    /// Gradient for the differentiable families; `None` for L1.
    pub fn gradient(&self, x: &Vector) -> Option<Vector> {
        match self {
            NodeObjective::Quadratic { q_mat, q } => Some(q_mat * x - q),
            NodeObjective::PNormPower { p, a } => Some(Vector::from_iterator(
                x.len(),
                x.iter().zip(a.iter()).map(|(xi, ai)| {
                    let u = xi - ai;
                    *p as f64 * u.signum() * u.abs().powi(*p as i32 - 1)
                }),
            )),
            NodeObjective::L1 { .. } => None,
        }
    }

    /// Strong convexity and smoothness constants `(μ_i, β_i)`, available for
    /// quadratics only (extreme eigenvalues of `Q_i`).
    pub fn curvature_bounds(&self) -> Option<(f64, f64)> {
        match self {
            NodeObjective::Quadratic { q_mat, .. } => {
                let e = linalg::sym_eigenvalues(q_mat);
                Some((e[0], e[e.len() - 1]))
            }
            _ => None,
        }
    }
}

/// Constraint `A_ij x_i + A_ji x_j = b` on undirected edge `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConstraint {
    pub i: usize,
    pub j: usize,
    pub a_ij: Mat,
    pub a_ji: Mat,
    pub b: Vector,
}

impl EdgeConstraint {
    pub fn rows(&self) -> usize {
        self.b.len()
    }
}

/// Consensus constraints `x_i − x_j = 0`: the lower-indexed endpoint gets `+I`.
pub fn build_consensus_constraints(g: &Graph, dim: usize) -> Vec<EdgeConstraint> {
    g.edges()
        .iter()
        .map(|&(i, j)| EdgeConstraint {
            i,
            j,
            a_ij: Mat::identity(dim, dim),
            a_ji: -Mat::identity(dim, dim),
            b: Vector::zeros(dim),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectedEdge {
    pub from: usize,
    pub to: usize,
    /// Index of the undirected edge in [`Graph::edges`].
    pub edge: usize,
    pub offset: usize,
    pub size: usize,
    /// Index of `(to|from)` in the directed list.
    pub partner: usize,
}

impl DirectedEdge {
    pub fn rows(&self) -> Range<usize> {
        self.offset..self.offset + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeLayout {
    pub directed: Vec<DirectedEdge>,
    pub node_offsets: Vec<usize>,
    pub node_dims: Vec<usize>,
    /// Range into `directed` of the out-edges of each node.
    pub node_edges: Vec<Range<usize>>,
    pub m_v: usize,
    pub m_e: usize,
}

impl EdgeLayout {
    pub fn new(g: &Graph, node_dims: &[usize], edge_sizes: &[usize]) -> Self {
        let n = g.n_nodes();
        let mut node_offsets = Vec::with_capacity(n);
        let mut m_v = 0;
        for &d in node_dims {
            node_offsets.push(m_v);
            m_v += d;
        }
        let mut directed = Vec::with_capacity(2 * g.n_edges());
        let mut node_edges = Vec::with_capacity(n);
        let mut m_e = 0;
        for i in 0..n {
            let start = directed.len();
            for &j in g.neighbors(i) {
                let edge = g
                    .edges()
                    .binary_search(&(i.min(j), i.max(j)))
                    .expect("neighbor implies edge");
                let size = edge_sizes[edge];
                directed.push(DirectedEdge { from: i, to: j, edge, offset: m_e, size, partner: 0 });
                m_e += size;
            }
            node_edges.push(start..directed.len());
        }
        let mut layout = EdgeLayout { directed, node_offsets, node_dims: node_dims.to_vec(), node_edges, m_v, m_e };
        for k in 0..layout.directed.len() {
            let DirectedEdge { from, to, .. } = layout.directed[k];
            layout.directed[k].partner = layout.index_of(to, from).expect("symmetric adjacency");
        }
        layout
    }

    /// Position of `(i|j)` in the directed list.
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        let range = self.node_edges.get(i)?.clone();
        self.directed[range.clone()]
            .binary_search_by_key(&j, |e| e.to)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn node_range(&self, i: usize) -> Range<usize> {
        self.node_offsets[i]..self.node_offsets[i] + self.node_dims[i]
    }

    /// Rows of `ℝ^{M_E}` owned by node `i` (its out-edges are contiguous).
    pub fn node_rows(&self, i: usize) -> Range<usize> {
        let r = self.node_edges[i].clone();
        if r.is_empty() {
            // No out-edges: empty range positioned after the previous node's rows.
            let at = self.directed[..r.start].last().map_or(0, |e| e.offset + e.size);
            return at..at;
        }
        self.directed[r.start].offset..self.directed[r.end - 1].offset + self.directed[r.end - 1].size
    }

    pub fn n_nodes(&self) -> usize {
        self.node_dims.len()
    }

    /// `P v`: swaps block `(i|j)` with block `(j|i)`.
    pub fn permute(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.m_e);
        for e in &self.directed {
            let src = &self.directed[e.partner];
            out.rows_mut(e.offset, e.size).copy_from(&v.rows(src.offset, src.size));
        }
        out
    }
}

/// One constraint violation found by [`ProblemInstance::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    NotPsd { node: usize, min_eigenvalue: f64 },
    NotSymmetric { node: usize },
    BadExponent { node: usize, p: u32 },
    Disconnected,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub graph: Graph,
    pub objectives: Vec<NodeObjective>,
    /// One constraint per undirected edge, in [`Graph::edges`] order.
    pub constraints: Vec<EdgeConstraint>,
    pub layout: EdgeLayout,
}

impl ProblemInstance {
    /// Pairs objectives and constraints with the graph. Constraints may come
    /// in any order and orientation but must cover every edge exactly once;
    /// dimension checks are left to [`validate`](Self::validate).
    pub fn new(graph: Graph, objectives: Vec<NodeObjective>, constraints: Vec<EdgeConstraint>) -> Result<Self> {
        if objectives.len() != graph.n_nodes() {
            return Err(PdmmError::Structure(format!(
                "{} objectives for {} nodes",
                objectives.len(),
                graph.n_nodes()
            )));
        }
        let mut slots: Vec<Option<EdgeConstraint>> = vec![None; graph.n_edges()];
        for c in constraints {
            let c = if c.i > c.j {
                EdgeConstraint { i: c.j, j: c.i, a_ij: c.a_ji, a_ji: c.a_ij, b: c.b }
            } else {
                c
            };
            let idx = graph.edges().binary_search(&(c.i, c.j)).map_err(|_| {
                PdmmError::Structure(format!("constraint on non-edge ({}, {})", c.i, c.j))
            })?;
            if slots[idx].replace(c).is_some() {
                return Err(PdmmError::Structure(format!("edge {:?} constrained twice", graph.edges()[idx])));
            }
        }
        let constraints = slots
            .into_iter()
            .enumerate()
            .map(|(k, c)| c.ok_or_else(|| PdmmError::Structure(format!("edge {:?} has no constraint", graph.edges()[k]))))
            .collect::<Result<Vec<_>>>()?;
        let dims: Vec<usize> = objectives.iter().map(NodeObjective::dim).collect();
        let sizes: Vec<usize> = constraints.iter().map(EdgeConstraint::rows).collect();
        let layout = EdgeLayout::new(&graph, &dims, &sizes);
        Ok(ProblemInstance { graph, objectives, constraints, layout })
    }

    pub fn consensus(graph: Graph, objectives: Vec<NodeObjective>) -> Result<Self> {
        let dim = objectives.first().map_or(1, NodeObjective::dim);
        let constraints = build_consensus_constraints(&graph, dim);
        Self::new(graph, objectives, constraints)
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    /// `A_{i|j}`.
    pub fn a_dir(&self, i: usize, j: usize) -> &Mat {
        let c = &self.constraints[self.edge_index(i, j)];
        if i < j { &c.a_ij } else { &c.a_ji }
    }

    pub fn b_edge(&self, i: usize, j: usize) -> &Vector {
        &self.constraints[self.edge_index(i, j)].b
    }

    fn edge_index(&self, i: usize, j: usize) -> usize {
        self.graph
            .edges()
            .binary_search(&(i.min(j), i.max(j)))
            .expect("edge exists")
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for c in &self.constraints {
            let (di, dj) = (self.objectives[c.i].dim(), self.objectives[c.j].dim());
            let m = c.rows();
            if c.a_ij.ncols() != di || c.a_ij.nrows() != m {
                out.push(Violation::Dimension(format!(
                    "A_{}|{} is {}x{}, expected {}x{}",
                    c.i, c.j, c.a_ij.nrows(), c.a_ij.ncols(), m, di
                )));
            }
            if c.a_ji.ncols() != dj || c.a_ji.nrows() != m {
                out.push(Violation::Dimension(format!(
                    "A_{}|{} is {}x{}, expected {}x{}",
                    c.j, c.i, c.a_ji.nrows(), c.a_ji.ncols(), m, dj
                )));
            }
        }
        for (node, obj) in self.objectives.iter().enumerate() {
            match obj {
                NodeObjective::Quadratic { q_mat, q } => {
                    if q_mat.nrows() != q.len() || q_mat.ncols() != q.len() {
                        out.push(Violation::Dimension(format!(
                            "Q_{node} is {}x{} but q_{node} has length {}",
                            q_mat.nrows(), q_mat.ncols(), q.len()
                        )));
                        continue;
                    }
                    let scale = q_mat.norm().max(f64::MIN_POSITIVE);
                    if (q_mat - q_mat.transpose()).norm() > 1e-12 * scale {
                        out.push(Violation::NotSymmetric { node });
                        continue;
                    }
                    let min_eig = linalg::sym_eigenvalues(q_mat).first().copied().unwrap_or(0.0);
                    if min_eig < -1e-10 * scale {
                        out.push(Violation::NotPsd { node, min_eigenvalue: min_eig });
                    }
                }
                NodeObjective::PNormPower { p, .. } if *p < 2 => {
                    out.push(Violation::BadExponent { node, p: *p });
                }
                _ => {}
            }
        }
        if !self.graph.is_connected() {
            out.push(Violation::Disconnected);
        }
        out
    }

    /// Node block `C_i`: the `A_{i|j}` for `j ∈ N(i)` stacked in neighbor order.
    pub fn node_block(&self, i: usize) -> Result<Mat> {
        let dim = self.layout.node_dims[i];
        let rows = self.layout.node_rows(i);
        let mut ci = Mat::zeros(rows.len(), dim);
        for e in &self.layout.directed[self.layout.node_edges[i].clone()] {
            let a = self.a_dir(e.from, e.to);
            if a.nrows() != e.size || a.ncols() != dim {
                return Err(PdmmError::Assembly(format!(
                    "A_{}|{} is {}x{}, expected {}x{}",
                    e.from, e.to, a.nrows(), a.ncols(), e.size, dim
                )));
            }
            ci.view_mut((e.offset - rows.start, 0), (e.size, dim)).copy_from(a);
        }
        Ok(ci)
    }

    /// Node block `d_i`: `b_ij / 2` for `j ∈ N(i)`.
    pub fn node_d(&self, i: usize) -> Vector {
        let rows = self.layout.node_rows(i);
        let mut di = Vector::zeros(rows.len());
        for e in &self.layout.directed[self.layout.node_edges[i].clone()] {
            di.rows_mut(e.offset - rows.start, e.size).copy_from(&(self.b_edge(e.from, e.to) * 0.5));
        }
        di
    }

    /// Sign `s` if every `A_{i|j}` at node `i` equals `s·I` with `s = ±1`.
    pub fn consensus_signs(&self, i: usize) -> Option<Vec<f64>> {
        let dim = self.layout.node_dims[i];
        self.layout.directed[self.layout.node_edges[i].clone()]
            .iter()
            .map(|e| {
                let a = self.a_dir(e.from, e.to);
                if a.nrows() != dim || a.ncols() != dim {
                    return None;
                }
                let s = a[(0, 0)];
                if s.abs() != 1.0 {
                    return None;
                }
                let ok = (0..dim).all(|r| (0..dim).all(|c| a[(r, c)] == if r == c { s } else { 0.0 }));
                ok.then_some(s)
            })
            .collect()
    }

    pub fn objective_value(&self, x: &Vector) -> f64 {
        (0..self.n_nodes())
            .map(|i| self.objectives[i].value(&x.rows_range(self.layout.node_range(i)).into_owned()))
            .sum()
    }

    /// Stacked gradient, `None` if some node is not differentiable.
    pub fn gradient(&self, x: &Vector) -> Option<Vector> {
        let mut g = Vector::zeros(self.layout.m_v);
        for i in 0..self.n_nodes() {
            let r = self.layout.node_range(i);
            let gi = self.objectives[i].gradient(&x.rows_range(r.clone()).into_owned())?;
            g.rows_range_mut(r).copy_from(&gi);
        }
        Some(g)
    }

    /// Global `(μ, β)`: minimum node `μ_i` and maximum node `β_i`.
    pub fn curvature_bounds(&self) -> Option<(f64, f64)> {
        let mut mu = f64::INFINITY;
        let mut beta = f64::NEG_INFINITY;
        for obj in &self.objectives {
            let (m, b) = obj.curvature_bounds()?;
            mu = mu.min(m);
            beta = beta.max(b);
        }
        Some((mu, beta))
    }

    /// Residual of the edge constraints, `A_ij x_i + A_ji x_j − b` stacked by edge.
    pub fn constraint_residual(&self, x: &Vector) -> Vector {
        let mut parts = Vec::new();
        for c in &self.constraints {
            let xi = x.rows_range(self.layout.node_range(c.i));
            let xj = x.rows_range(self.layout.node_range(c.j));
            let r = &c.a_ij * xi + &c.a_ji * xj - &c.b;
            parts.extend(r.iter().copied());
        }
        Vector::from_vec(parts)
    }
}

/// Stacked `C ∈ ℝ^{M_E × M_V}`.
pub fn assemble_c(prob: &ProblemInstance) -> Result<Mat> {
    let l = &prob.layout;
    let mut c = Mat::zeros(l.m_e, l.m_v);
    for i in 0..prob.n_nodes() {
        let block = prob.node_block(i)?;
        let rows = l.node_rows(i);
        c.view_mut((rows.start, l.node_offsets[i]), (rows.len(), l.node_dims[i])).copy_from(&block);
    }
    Ok(c)
}

/// Symmetric permutation matrix exchanging `(i|j)` and `(j|i)` blocks.
pub fn assemble_p(layout: &EdgeLayout) -> Mat {
    let mut p = Mat::zeros(layout.m_e, layout.m_e);
    for e in &layout.directed {
        let src = &layout.directed[e.partner];
        for k in 0..e.size {
            p[(e.offset + k, src.offset + k)] = 1.0;
        }
    }
    p
}

pub fn assemble_d(prob: &ProblemInstance) -> Vector {
    let mut d = Vector::zeros(prob.layout.m_e);
    for i in 0..prob.n_nodes() {
        let rows = prob.layout.node_rows(i);
        d.rows_range_mut(rows).copy_from(&prob.node_d(i));
    }
    d
}

// ---- JSON schema -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveSpec {
    Quadratic {
        #[serde(rename = "Q")]
        q_mat: Vec<Vec<f64>>,
        q: Vec<f64>,
    },
    Pnorm {
        p: u32,
        a: Vec<f64>,
    },
    L1 {
        a: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeConstraintSpec {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "A_ij")]
    pub a_ij: Vec<Vec<f64>>,
    #[serde(rename = "A_ji")]
    pub a_ji: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintsSpec {
    Consensus { consensus: usize },
    List(Vec<EdgeConstraintSpec>),
}

/// Serialized problem: `{graph, objectives, constraints}` with row-major
/// nested arrays for matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub graph: Graph,
    pub objectives: Vec<ObjectiveSpec>,
    pub constraints: ConstraintsSpec,
}

impl ProblemSpec {
    pub fn into_problem(self) -> Result<ProblemInstance> {
        let objectives = self
            .objectives
            .into_iter()
            .map(|o| {
                Ok(match o {
                    ObjectiveSpec::Quadratic { q_mat, q } => NodeObjective::Quadratic {
                        q_mat: linalg::matrix_from_rows(&q_mat, "Q")?,
                        q: Vector::from_vec(q),
                    },
                    ObjectiveSpec::Pnorm { p, a } => NodeObjective::PNormPower { p, a: Vector::from_vec(a) },
                    ObjectiveSpec::L1 { a } => NodeObjective::L1 { a: Vector::from_vec(a) },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let constraints = match self.constraints {
            ConstraintsSpec::Consensus { consensus } => build_consensus_constraints(&self.graph, consensus),
            ConstraintsSpec::List(list) => list
                .into_iter()
                .map(|c| {
                    Ok(EdgeConstraint {
                        i: c.i,
                        j: c.j,
                        a_ij: linalg::matrix_from_rows(&c.a_ij, "A_ij")?,
                        a_ji: linalg::matrix_from_rows(&c.a_ji, "A_ji")?,
                        b: Vector::from_vec(c.b),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        ProblemInstance::new(self.graph, objectives, constraints)
    }

    pub fn from_problem(prob: &ProblemInstance) -> Self {
        let objectives = prob
            .objectives
            .iter()
            .map(|o| match o {
                NodeObjective::Quadratic { q_mat, q } => ObjectiveSpec::Quadratic {
                    q_mat: linalg::matrix_to_rows(q_mat),
                    q: q.iter().copied().collect(),
                },
                NodeObjective::PNormPower { p, a } => ObjectiveSpec::Pnorm { p: *p, a: a.iter().copied().collect() },
                NodeObjective::L1 { a } => ObjectiveSpec::L1 { a: a.iter().copied().collect() },
            })
            .collect();
        let constraints = ConstraintsSpec::List(
            prob.constraints
                .iter()
                .map(|c| EdgeConstraintSpec {
                    i: c.i,
                    j: c.j,
                    a_ij: linalg::matrix_to_rows(&c.a_ij),
                    a_ji: linalg::matrix_to_rows(&c.a_ji),
                    b: c.b.iter().copied().collect(),
                })
                .collect(),
        );
        ProblemSpec { graph: prob.graph.clone(), objectives, constraints }
    }
}
