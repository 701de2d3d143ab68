//! Random problem generators shared by experiments, tests and benches.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{PdmmError, Result};
use crate::graph::Graph;
use crate::linalg::{Mat, Vector};
use crate::problem::{EdgeConstraint, NodeObjective, ProblemInstance};

pub fn random_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn random_matrix<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> Mat {
    Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Haar-ish random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    let qr = random_matrix(n, n, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Symmetric matrix with the given eigenvalues and a random eigenbasis.
pub fn spd_with_eigenvalues<R: Rng + ?Sized>(eigs: &[f64], rng: &mut R) -> Mat {
    let v = random_orthogonal(eigs.len(), rng);
    let m = &v * Mat::from_diagonal(&Vector::from_column_slice(eigs)) * v.transpose();
    // exact symmetry
    (&m + m.transpose()) * 0.5
}

/// First connected G(n, p) draw at seeds `seed, seed+1, …`; also returns the
/// seed used and the disconnected seeds that were skipped.
pub fn connected_er(n: usize, p: f64, seed: u64, max_tries: u64) -> Result<(Graph, u64, Vec<u64>)> {
    let mut skipped = Vec::new();
    for s in seed..seed.saturating_add(max_tries) {
        let g = Graph::erdos_renyi(n, p, s)?;
        if g.is_connected() {
            return Ok((g, s, skipped));
        }
        skipped.push(s);
    }
    Err(PdmmError::Structure(format!(
        "no connected G({n}, {p}) within {max_tries} seeds from {seed}"
    )))
}

pub fn consensus_quadratic<R: Rng + ?Sized>(g: Graph, dim: usize, eig_lo: f64, eig_hi: f64, rng: &mut R) -> Result<ProblemInstance> {
    let objectives = (0..g.n_nodes())
        .map(|_| {
            let eigs: Vec<f64> = (0..dim).map(|_| rng.random_range(eig_lo..=eig_hi)).collect();
            NodeObjective::Quadratic { q_mat: spd_with_eigenvalues(&eigs, rng), q: random_vector(dim, rng) }
        })
        .collect();
    ProblemInstance::consensus(g, objectives)
}

pub fn consensus_pnorm<R: Rng + ?Sized>(g: Graph, dim: usize, p: u32, rng: &mut R) -> Result<ProblemInstance> {
    let objectives = (0..g.n_nodes())
        .map(|_| NodeObjective::PNormPower { p, a: random_vector(dim, rng) })
        .collect();
    ProblemInstance::consensus(g, objectives)
}

pub fn consensus_l1<R: Rng + ?Sized>(g: Graph, dim: usize, rng: &mut R) -> Result<ProblemInstance> {
    let objectives = (0..g.n_nodes()).map(|_| NodeObjective::L1 { a: random_vector(dim, rng) }).collect();
    ProblemInstance::consensus(g, objectives)
}

/// Quadratic objectives with random dense edge constraints of `rows` rows.
/// `b` is generated from a random point, so the constraint set is nonempty.
pub fn random_affine_quadratic<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    dim: usize,
    rows: usize,
    seed: u64,
    rng: &mut R,
) -> Result<ProblemInstance> {
    let (g, _, _) = connected_er(n, p, seed, 10_000)?;
    let x0: Vec<Vector> = (0..n).map(|_| random_vector(dim, rng)).collect();
    let constraints = g
        .edges()
        .iter()
        .map(|&(i, j)| {
            let a_ij = random_matrix(rows, dim, rng);
            let a_ji = random_matrix(rows, dim, rng);
            let b = &a_ij * &x0[i] + &a_ji * &x0[j];
            EdgeConstraint { i, j, a_ij, a_ji, b }
        })
        .collect();
    let objectives = (0..n)
        .map(|_| {
            let eigs: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..=3.0)).collect();
            NodeObjective::Quadratic { q_mat: spd_with_eigenvalues(&eigs, rng), q: random_vector(dim, rng) }
        })
        .collect();
    ProblemInstance::new(g, objectives, constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spd_has_requested_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = spd_with_eigenvalues(&[1.0, 2.5, 7.0], &mut rng);
        let e = linalg::sym_eigenvalues(&m);
        for (a, b) in e.iter().zip([1.0, 2.5, 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn connected_er_skips_disconnected() {
        let (g, seed, skipped) = connected_er(10, 0.15, 0, 10_000).unwrap();
        assert!(g.is_connected());
        for s in &skipped {
            assert!(!Graph::erdos_renyi(10, 0.15, *s).unwrap().is_connected());
        }
        assert_eq!(seed, skipped.len() as u64);
    }
}
