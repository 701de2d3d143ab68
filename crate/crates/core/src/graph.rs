//! Undirected network topology.
//!
//! Nodes are dense indices `0..n`. Every neighbor list is kept sorted
//! ascending, which the directed-edge layout of the problem assembly relies on.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdmmError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct Graph {
    n: usize,
    /// Undirected edges `(i, j)` with `i < j`, sorted lexicographically.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for Graph {
    type Error = PdmmError;

    fn try_from(r: GraphRepr) -> Result<Self> {
        Graph::from_edges(r.n, r.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<Graph> for GraphRepr {
    fn from(g: Graph) -> Self {
        GraphRepr {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl Graph {
    /// Builds a graph from an edge list. Orientation of each pair is ignored;
    /// self-loops, duplicates and out-of-range endpoints are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(PdmmError::Parameter("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(PdmmError::Structure(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(PdmmError::Structure(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(PdmmError::Structure(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Graph { n, edges, adjacency })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edges(n, std::iter::empty())
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Erdős–Rényi G(n, p): each unordered pair is included independently
    /// with probability `p`. No resampling happens for disconnected draws.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PdmmError::Parameter(format!(
                "edge probability {p} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency
            .get(i)
            .is_some_and(|n| n.binary_search(&j).is_ok())
    }

    /// Hop distances from `src`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Largest shortest-path hop count over all node pairs.
    pub fn diameter(&self) -> Result<usize> {
        let mut best = 0;
        for s in 0..self.n {
            for d in self.bfs_distances(s) {
                match d {
                    Some(d) => best = best.max(d),
                    None => {
                        return Err(PdmmError::Structure(
                            "diameter of a disconnected graph is undefined".into(),
                        ))
                    }
                }
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Floyd–Warshall all-pairs hop counts, independent of the BFS path.
    fn apsp_diameter(g: &Graph) -> usize {
        let n = g.n_nodes();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(i, j) in g.edges() {
            d[i][j] = 1;
            d[j][i] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d.iter().flatten().copied().max().unwrap()
    }

    #[test]
    fn er_extremes() {
        assert_eq!(Graph::erdos_renyi(5, 0.0, 3).unwrap().n_edges(), 0);
        let k4 = Graph::erdos_renyi(4, 1.0, 3).unwrap();
        assert_eq!(k4.n_edges(), 6);
        assert_eq!(k4, Graph::complete(4).unwrap());
    }

    #[test]
    fn er_rejects_bad_probability() {
        assert!(matches!(
            Graph::erdos_renyi(5, 1.5, 0),
            Err(PdmmError::Parameter(_))
        ));
        assert!(Graph::erdos_renyi(5, -0.1, 0).is_err());
        assert!(Graph::erdos_renyi(5, f64::NAN, 0).is_err());
    }

    #[test]
    fn er_is_reproducible_and_concentrated() {
        let p = (10f64).ln() / 10.0;
        assert_eq!(
            Graph::erdos_renyi(10, p, 42).unwrap(),
            Graph::erdos_renyi(10, p, 42).unwrap()
        );
        let total: usize = (0..2000)
            .map(|s| Graph::erdos_renyi(10, p, s).unwrap().n_edges())
            .sum();
        let mean = total as f64 / 2000.0;
        // 45 pairs * p = 10.36; binomial sd of the mean is ~0.06
        assert!((mean - 45.0 * p).abs() < 0.4, "mean edge count {mean}");
    }

    #[test]
    fn connectivity() {
        assert!(Graph::path(3).unwrap().is_connected());
        assert!(!Graph::empty(2).unwrap().is_connected());
        assert!(Graph::complete(4).unwrap().is_connected());
        assert!(Graph::empty(1).unwrap().is_connected());
    }

    #[test]
    fn diameters() {
        assert_eq!(Graph::empty(1).unwrap().diameter().unwrap(), 0);
        assert_eq!(Graph::complete(4).unwrap().diameter().unwrap(), 1);
        let path = Graph::path(3).unwrap();
        assert_eq!(path.diameter().unwrap(), 2);
        assert_eq!(apsp_diameter(&path), 2);
        assert!(Graph::empty(3).unwrap().diameter().is_err());
        for seed in 0..50 {
            let g = Graph::erdos_renyi(9, 0.35, seed).unwrap();
            if g.is_connected() {
                assert_eq!(g.diameter().unwrap(), apsp_diameter(&g));
            }
        }
    }

    #[test]
    fn complete_er_has_unit_diameter() {
        for n in 2..8 {
            assert_eq!(Graph::erdos_renyi(n, 1.0, 9).unwrap().diameter().unwrap(), 1);
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_sorted() {
        let g = Graph::from_edges(5, [(3, 1), (0, 4), (1, 0), (2, 4)]).unwrap();
        for i in 0..5 {
            let nb = g.neighbors(i);
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &j in nb {
                assert!(g.neighbors(j).contains(&i));
            }
        }
        assert_eq!(g.edges(), &[(0, 1), (0, 4), (1, 3), (2, 4)]);
    }

    #[test]
    fn constructor_rejects_bad_edges() {
        assert!(Graph::from_edges(3, [(1, 1)]).is_err());
        assert!(Graph::from_edges(3, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_edges(3, [(0, 3)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3), (1, 2)]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"n":4,"edges":[[0,1],[1,2],[2,3]]}"#);
        let back: Graph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Graph>(r#"{"n":2,"edges":[[0,0]]}"#).is_err());
    }
}
