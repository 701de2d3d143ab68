//! Exact per-node primal updates.
//!
//! Node `i` minimizes
//! `f_i(x) − ⟨C_iᵀ z_i, x⟩ + ρ/2 ‖C_i x − d_i‖²`
//! where `C_i`, `d_i`, `z_i` are its blocks of `C`, `d`, `z`. Quadratics are
//! solved through a cached factorization of `Q + ρ C_iᵀC_i`. The L1 and p-norm
//! families need `C_iᵀC_i = m·I` (consensus blocks) so the problem splits into
//! independent scalar problems.

use nalgebra::linalg::{Cholesky, LU};
use nalgebra::Dyn;

use crate::error::{PdmmError, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{NodeObjective, ProblemInstance};

/// Borrowed inputs for one node's primal update.
#[derive(Debug, Clone, Copy)]
pub struct LocalUpdateInput<'a> {
    pub node: usize,
    pub c_i: &'a Mat,
    pub d_i: &'a Vector,
    pub z_i: &'a Vector,
    pub rho: f64,
}

/// Stopping rule for [`scalar_convex_minimize`].
#[derive(Debug, Clone, Copy)]
pub struct ScalarTolerance {
    /// Accept `t` once `|g(t)| ≤ grad`.
    pub grad: f64,
    /// Accept once the bracket is at most this wide.
    pub width: f64,
}

impl Default for ScalarTolerance {
    fn default() -> Self {
        ScalarTolerance { grad: 1e-12, width: 1e-14 }
    }
}

const MAX_DOUBLINGS: usize = 200;
const MAX_REFINE: usize = 400;

/// Root of a nondecreasing, sign-changing scalar function (the derivative of
/// a 1-D convex objective). Brackets by geometric expansion from `hint`, then
/// refines with Illinois false position.
pub fn scalar_convex_minimize<F>(g: F, hint: f64, tol: ScalarTolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let g0 = g(hint);
    if !g0.is_finite() {
        return Err(PdmmError::Solver { node: usize::MAX, reason: format!("derivative not finite at {hint}") });
    }
    if g0.abs() <= tol.grad {
        return Ok(hint);
    }
    let (mut lo, mut glo, mut hi, mut ghi);
    let mut step = hint.abs().max(1.0);
    if g0 > 0.0 {
        (hi, ghi) = (hint, g0);
        let mut k = 0;
        loop {
            lo = hint - step;
            glo = g(lo);
            if glo <= 0.0 {
                break;
            }
            (hi, ghi) = (lo, glo);
            step *= 2.0;
            k += 1;
            if k >= MAX_DOUBLINGS {
                return Err(bracket_failure(hint));
            }
        }
    } else {
        (lo, glo) = (hint, g0);
        let mut k = 0;
        loop {
            hi = hint + step;
            ghi = g(hi);
            if ghi >= 0.0 {
                break;
            }
            (lo, glo) = (hi, ghi);
            step *= 2.0;
            k += 1;
            if k >= MAX_DOUBLINGS {
                return Err(bracket_failure(hint));
            }
        }
    }
    if glo.abs() <= tol.grad {
        return Ok(lo);
    }
    if ghi.abs() <= tol.grad {
        return Ok(hi);
    }

    let mut side = 0i8;
    for _ in 0..MAX_REFINE {
        if hi - lo <= tol.width {
            break;
        }
        let mut t = (lo * ghi - hi * glo) / (ghi - glo);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
            if !(t > lo && t < hi) {
                break;
            }
        }
        let gt = g(t);
        if gt.abs() <= tol.grad {
            return Ok(t);
        }
        if gt < 0.0 {
            (lo, glo) = (t, gt);
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            (hi, ghi) = (t, gt);
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    // bracket collapsed; return the endpoint closer to stationarity
    Ok(if g(lo).abs() <= g(hi).abs() { lo } else { hi })
}

fn bracket_failure(hint: f64) -> PdmmError {
    PdmmError::Solver {
        node: usize::MAX,
        reason: format!("no sign change after {MAX_DOUBLINGS} bracket doublings from {hint}"),
    }
}

fn with_node(e: PdmmError, node: usize) -> PdmmError {
    match e {
        PdmmError::Solver { reason, .. } => PdmmError::Solver { node, reason },
        other => other,
    }
}

/// Scalar `m` with `C_iᵀC_i = m·I`, if it exists.
fn separable_scale(c_i: &Mat) -> Option<f64> {
    let g = c_i.transpose() * c_i;
    let n = g.nrows();
    if n == 0 {
        return None;
    }
    let m = g[(0, 0)];
    let tol = 1e-12 * m.abs().max(1.0);
    for r in 0..n {
        for c in 0..n {
            let want = if r == c { m } else { 0.0 };
            if (g[(r, c)] - want).abs() > tol {
                return None;
            }
        }
    }
    Some(m)
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

enum Kind {
    Quadratic { lhs: Mat, factor: Factor, q: Vector },
    L1 { a: Vector, m: f64 },
    PNorm { p: u32, a: Vector, m: f64 },
}

/// Primal update for one node with its blocks and `ρ` baked in.
pub struct NodeUpdater {
    node: usize,
    rho: f64,
    c_i: Mat,
    d_i: Vector,
    kind: Kind,
}

impl NodeUpdater {
    pub fn new(obj: &NodeObjective, node: usize, c_i: Mat, d_i: Vector, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(PdmmError::Parameter(format!("step size must be positive, got {rho}")));
        }
        if c_i.ncols() != obj.dim() || c_i.nrows() != d_i.len() {
            return Err(PdmmError::Assembly(format!("node {node}: block dimensions disagree with objective")));
        }
        let kind = match obj {
            NodeObjective::Quadratic { q_mat, q } => {
                let lhs = q_mat + rho * c_i.transpose() * &c_i;
                let factor = match lhs.clone().cholesky() {
                    Some(ch) => Factor::Cholesky(ch),
                    None => {
                        let lu = lhs.clone().lu();
                        if !lu.is_invertible() {
                            return Err(PdmmError::Solver { node, reason: "Q + ρC_iᵀC_i is singular".into() });
                        }
                        Factor::Lu(lu)
                    }
                };
                Kind::Quadratic { lhs, factor, q: q.clone() }
            }
            NodeObjective::L1 { a } => {
                let m = separable_scale(&c_i).ok_or(PdmmError::UnsupportedPairing { node, objective: "l1" })?;
                Kind::L1 { a: a.clone(), m }
            }
            NodeObjective::PNormPower { p, a } => {
                if *p < 2 {
                    return Err(PdmmError::Parameter(format!("p-norm exponent {p} < 2 at node {node}")));
                }
                let m = separable_scale(&c_i).ok_or(PdmmError::UnsupportedPairing { node, objective: "pnorm" })?;
                Kind::PNorm { p: *p, a: a.clone(), m }
            }
        };
        Ok(NodeUpdater { node, rho, c_i, d_i, kind })
    }

    /// Builds the updater of node `i` of a problem.
    pub fn for_node(prob: &ProblemInstance, i: usize, rho: f64) -> Result<Self> {
        Self::new(&prob.objectives[i], i, prob.node_block(i)?, prob.node_d(i), rho)
    }

    pub fn c_block(&self) -> &Mat {
        &self.c_i
    }

    pub fn d_block(&self) -> &Vector {
        &self.d_i
    }

    /// `x_i = argmin f_i(x) − ⟨C_iᵀz_i, x⟩ + ρ/2‖C_i x − d_i‖²`.
    pub fn solve(&self, z_i: &Vector) -> Result<Vector> {
        let node = self.node;
        let rho = self.rho;
        // linear coefficient C_iᵀ(z_i + ρ d_i)
        let s = self.c_i.transpose() * (z_i + rho * &self.d_i);
        match &self.kind {
            Kind::Quadratic { lhs, factor, q } => {
                let rhs = q + &s;
                let x = match factor {
                    Factor::Cholesky(ch) => ch.solve(&rhs),
                    Factor::Lu(lu) => lu
                        .solve(&rhs)
                        .ok_or_else(|| PdmmError::Solver { node, reason: "LU solve failed".into() })?,
                };
                let resid = (lhs * &x - &rhs).norm();
                if !(resid <= 1e-10 * rhs.norm()) && resid > 0.0 {
                    return Err(PdmmError::Solver {
                        node,
                        reason: format!("stationarity residual {resid:e} too large (near-singular system)"),
                    });
                }
                Ok(x)
            }
            Kind::L1 { a, m } => {
                let rm = rho * m;
                let mut x = a.clone();
                for k in 0..a.len() {
                    if rm == 0.0 {
                        if s[k].abs() > 1.0 {
                            return Err(PdmmError::Solver { node, reason: "unbounded isolated L1 update".into() });
                        }
                        continue;
                    }
                    let w = (s[k] - rm * a[k]) / rm;
                    x[k] = a[k] + soft_threshold(w, 1.0 / rm);
                }
                Ok(x)
            }
            Kind::PNorm { p, a, m } => {
                let rm = rho * m;
                let pf = *p as f64;
                let pm1 = *p as i32 - 1;
                let mut x = a.clone();
                for k in 0..a.len() {
                    let (ak, sk) = (a[k], s[k]);
                    let g = |t: f64| {
                        let u = t - ak;
                        pf * u.signum() * u.abs().powi(pm1) - sk + rm * t
                    };
                    let tol = ScalarTolerance { grad: 1e-12 * (1.0 + sk.abs()), width: 1e-14 };
                    x[k] = scalar_convex_minimize(g, ak, tol).map_err(|e| with_node(e, node))?;
                }
                Ok(x)
            }
        }
    }
}

pub fn soft_threshold(w: f64, tau: f64) -> f64 {
    w.signum() * (w.abs() - tau).max(0.0)
}

fn check_kind(obj: &NodeObjective, want: &'static str) -> Result<()> {
    if obj.kind() == want {
        Ok(())
    } else {
        Err(PdmmError::Parameter(format!("expected {want} objective, got {}", obj.kind())))
    }
}

fn run_update(obj: &NodeObjective, input: LocalUpdateInput<'_>) -> Result<Vector> {
    NodeUpdater::new(obj, input.node, input.c_i.clone(), input.d_i.clone(), input.rho)?.solve(input.z_i)
}

pub fn primal_update_quadratic(obj: &NodeObjective, input: LocalUpdateInput<'_>) -> Result<Vector> {
    check_kind(obj, "quadratic")?;
    run_update(obj, input)
}

pub fn primal_update_l1(obj: &NodeObjective, input: LocalUpdateInput<'_>) -> Result<Vector> {
    check_kind(obj, "l1")?;
    run_update(obj, input)
}

pub fn primal_update_pnorm(obj: &NodeObjective, input: LocalUpdateInput<'_>) -> Result<Vector> {
    check_kind(obj, "pnorm")?;
    run_update(obj, input)
}

/// Dispatches on the objective family.
pub fn primal_update(obj: &NodeObjective, input: LocalUpdateInput<'_>) -> Result<Vector> {
    run_update(obj, input)
}

/// Value of the node update objective; used by tests and diagnostics.
pub fn update_objective(obj: &NodeObjective, input: LocalUpdateInput<'_>, x: &Vector) -> f64 {
    let r = input.c_i * x - input.d_i;
    obj.value(x) - (input.c_i.transpose() * input.z_i).dot(x) + 0.5 * input.rho * r.norm_squared()
}
