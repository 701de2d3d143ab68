//! Spectral quantities, rate bounds, reference points and centralized
//! oracles used to check PDMM runs against its convergence theory.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{PdmmError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::local::{scalar_convex_minimize, ScalarTolerance};
use crate::pdmm::{IterationRecord, Pdmm, PdmmConfig, TraceReference};
use crate::problem::{assemble_c, assemble_d, assemble_p, NodeObjective, ProblemInstance};

/// Relative threshold below which a singular value counts as zero.
pub const SINGULAR_REL_TOL: f64 = 1e-10;
/// Principal angles at or below this many radians count as zero.
pub const ANGLE_TOL: f64 = 1e-7;
/// Relative residual above which the `ĝ` system is declared inconsistent.
pub const GHAT_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub sigma_max: f64,
    pub sigma_min_nz: f64,
    pub mu: f64,
    pub beta: f64,
    pub kappa: f64,
    #[serde(rename = "theta_F")]
    pub theta_f: f64,
    /// Step size the contraction factor was evaluated at.
    pub rho: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rho_star: f64,
    pub delta_star: f64,
    pub epsilon: Option<f64>,
}

impl SpectralReport {
    /// Builds the report for `C`, `P` and curvature constants. `rho = None`
    /// evaluates everything at `ρ*`.
    pub fn compute(c: &Mat, p: &Mat, mu: f64, beta: f64, rho: Option<f64>) -> Result<Self> {
        if !(mu > 0.0 && beta >= mu) {
            return Err(PdmmError::Parameter(format!("need 0 < mu <= beta, got mu={mu}, beta={beta}")));
        }
        let (sigma_max, sigma_min_nz) = singular_extremes(c)?;
        let theta_f = friedrichs_angle(c, p)?;
        let opt = optimal_rho(mu, beta, sigma_max, sigma_min_nz);
        let rho = rho.unwrap_or(opt.rho_star);
        let delta = contraction_delta(rho, mu, beta, sigma_max, sigma_min_nz);
        let gamma = gap_rate_gamma(delta, theta_f)?;
        Ok(SpectralReport {
            sigma_max,
            sigma_min_nz,
            mu,
            beta,
            kappa: opt.kappa,
            theta_f,
            rho,
            delta,
            gamma,
            rho_star: opt.rho_star,
            delta_star: opt.delta_star,
            epsilon: None,
        })
    }

    /// Report for a problem whose objectives carry curvature bounds.
    pub fn for_problem(prob: &ProblemInstance, rho: Option<f64>) -> Result<Self> {
        let (mu, beta) = prob
            .curvature_bounds()
            .ok_or_else(|| PdmmError::Parameter("curvature bounds need quadratic objectives".into()))?;
        let c = assemble_c(prob)?;
        let p = assemble_p(&prob.layout);
        Self::compute(&c, &p, mu, beta, rho)
    }

    /// `σ_max² / (ρ σ_min≠0²)`, the factor between auxiliary and primal errors.
    pub fn primal_factor(&self) -> f64 {
        self.sigma_max.powi(2) / (self.rho * self.sigma_min_nz.powi(2))
    }
}

/// `(σ_max, σ_min≠0)`, ignoring singular values at or below `1e−10·σ_max`.
pub fn singular_extremes(c: &Mat) -> Result<(f64, f64)> {
    let s = linalg::singular_values(c);
    let smax = s.first().copied().unwrap_or(0.0);
    if !(smax > 0.0) {
        return Err(PdmmError::Degenerate("matrix has no nonzero singular value".into()));
    }
    let smin = s.iter().copied().filter(|&v| v > SINGULAR_REL_TOL * smax).fold(smax, f64::min);
    Ok((smax, smin))
}

/// Principal angles between the spans of two orthonormal bases, ascending.
///
/// Angles whose cosine exceeds `1/√2` are recovered from sines, which keeps
/// small angles accurate.
pub fn principal_angles(u: &Mat, w: &Mat) -> Vec<f64> {
    let (a, b) = if u.ncols() >= w.ncols() { (u, w) } else { (w, u) };
    let k = b.ncols();
    if k == 0 {
        return Vec::new();
    }
    let atb = a.transpose() * b;
    let cos = linalg::singular_values(&atb);
    let mut sin = linalg::singular_values(&(b - a * &atb));
    sin.reverse();
    (0..k)
        .map(|i| {
            let c = cos.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let s = sin.get(i).copied().unwrap_or(1.0).clamp(0.0, 1.0);
            if c * c >= 0.5 { s.asin() } else { c.acos() }
        })
        .collect()
}

/// Smallest principal angle above [`ANGLE_TOL`], or `π/2` if there is none.
pub fn friedrichs_angle_of_bases(u: &Mat, w: &Mat) -> Result<f64> {
    if u.ncols() == 0 || w.ncols() == 0 {
        return Err(PdmmError::Degenerate("principal angles of a zero subspace".into()));
    }
    Ok(principal_angles(u, w).into_iter().find(|&t| t > ANGLE_TOL).unwrap_or(FRAC_PI_2))
}

/// Friedrichs angle between `ran(C)` and `ran(PC)`.
pub fn friedrichs_angle(c: &Mat, p: &Mat) -> Result<f64> {
    let u = linalg::range_basis(c, SINGULAR_REL_TOL);
    let w = linalg::range_basis(&(p * c), SINGULAR_REL_TOL);
    friedrichs_angle_of_bases(&u, &w)
}

pub fn contraction_delta(rho: f64, mu: f64, beta: f64, sigma_max: f64, sigma_min_nz: f64) -> f64 {
    let a = rho * sigma_max * sigma_max / mu;
    let b = rho * sigma_min_nz * sigma_min_nz / beta;
    ((a - 1.0) / (a + 1.0)).max((1.0 - b) / (1.0 + b))
}

/// Subdominant rate of the two-step GAP operator for contraction `δ` and
/// Friedrichs angle `θ_F`.
pub fn gap_rate_gamma(delta: f64, theta_f: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(PdmmError::Parameter(format!("delta must lie in [0, 1), got {delta}")));
    }
    let c = theta_f.cos().max(0.0);
    let h = (1.0 - delta) * c;
    let root = (h * h / 4.0 + delta).sqrt();
    let plus = delta + h * (h / 2.0 + root);
    let minus = delta + h * (h / 2.0 - root);
    let gamma = plus.max(minus).abs();
    debug_assert!(gamma < 1.0);
    Ok(gamma)
}

/// The `δ ∈ [0, 1)` with `gap_rate_gamma(δ, θ_F) = target`, by bisection.
pub fn delta_for_gamma(target: f64, theta_f: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(PdmmError::Parameter(format!("target rate must lie in (0, 1), got {target}")));
    }
    let floor = gap_rate_gamma(0.0, theta_f)?;
    if floor >= target {
        return Err(PdmmError::Degenerate(format!(
            "rate {target} unreachable: cos^2(theta_F) = {floor} already exceeds it"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap_rate_gamma(mid, theta_f)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalStep {
    pub rho_star: f64,
    pub delta_star: f64,
    pub kappa: f64,
}

pub fn optimal_rho(mu: f64, beta: f64, sigma_max: f64, sigma_min_nz: f64) -> OptimalStep {
    let rho_star = (beta * mu).sqrt() / (sigma_max * sigma_min_nz);
    let kappa = sigma_max * sigma_max * beta / (sigma_min_nz * sigma_min_nz * mu);
    let sk = kappa.sqrt();
    OptimalStep { rho_star, delta_star: (sk - 1.0) / (sk + 1.0), kappa }
}

/// `ε = σ_max²/(ρ σ_min≠0²) · ‖z⁰ − z̃₀‖² / γ`.
pub fn epsilon_bound(report: &SpectralReport, rho: f64, z0: &Vector, z_tilde_0: &Vector) -> Result<f64> {
    if !(report.gamma > 0.0) {
        return Err(PdmmError::Degenerate("rate bound gamma is zero".into()));
    }
    let factor = report.sigma_max.powi(2) / (rho * report.sigma_min_nz.powi(2));
    Ok(factor * linalg::dist_sq(z0, z_tilde_0) / report.gamma)
}

// ---- centralized oracles ---------------------------------------------------

/// Every constraint is `±(x_i − x_j) = 0` with identity blocks.
pub fn is_consensus(prob: &ProblemInstance) -> bool {
    prob.constraints.iter().all(|c| {
        let d = c.b.len();
        let eye = Mat::identity(d, d);
        c.b.iter().all(|&v| v == 0.0)
            && c.a_ij.shape() == (d, d)
            && c.a_ji.shape() == (d, d)
            && ((c.a_ij == eye && c.a_ji == -&eye) || (c.a_ij == -&eye && c.a_ji == eye))
    })
}

fn consensus_dim(prob: &ProblemInstance) -> Result<usize> {
    if !prob.graph.is_connected() {
        return Err(PdmmError::Oracle("consensus oracle needs a connected graph".into()));
    }
    if !is_consensus(prob) {
        return Err(PdmmError::Oracle("objective family is only supported with consensus constraints".into()));
    }
    let dim = prob.objectives[0].dim();
    if prob.objectives.iter().any(|o| o.dim() != dim) {
        return Err(PdmmError::Oracle("consensus nodes disagree in dimension".into()));
    }
    Ok(dim)
}

fn replicate(prob: &ProblemInstance, xbar: &Vector) -> Vector {
    let mut x = Vector::zeros(prob.layout.m_v);
    for i in 0..prob.n_nodes() {
        x.rows_range_mut(prob.layout.node_range(i)).copy_from(xbar);
    }
    x
}

/// Minimizer of the global problem computed without PDMM.
pub fn centralized_oracle(prob: &ProblemInstance) -> Result<Vector> {
    let kinds: Vec<&str> = prob.objectives.iter().map(NodeObjective::kind).collect();
    if kinds.iter().all(|&k| k == "quadratic") {
        if is_consensus(prob) && prob.graph.is_connected() && consensus_dim(prob).is_ok() {
            return quadratic_consensus_oracle(prob);
        }
        return quadratic_kkt_oracle(prob);
    }
    if kinds.iter().all(|&k| k == "pnorm") {
        return pnorm_consensus_oracle(prob);
    }
    if kinds.iter().all(|&k| k == "l1") {
        return l1_consensus_oracle(prob);
    }
    Err(PdmmError::Oracle("mixed objective families have no oracle".into()))
}

fn quadratic_consensus_oracle(prob: &ProblemInstance) -> Result<Vector> {
    let dim = consensus_dim(prob)?;
    let mut q_sum = Mat::zeros(dim, dim);
    let mut lin = Vector::zeros(dim);
    for obj in &prob.objectives {
        if let NodeObjective::Quadratic { q_mat, q } = obj {
            q_sum += q_mat;
            lin += q;
        }
    }
    let xbar = q_sum
        .lu()
        .solve(&lin)
        .ok_or_else(|| PdmmError::Oracle("sum of Q_i is singular".into()))?;
    Ok(replicate(prob, &xbar))
}

fn quadratic_kkt_oracle(prob: &ProblemInstance) -> Result<Vector> {
    let l = &prob.layout;
    let m_v = l.m_v;
    let m_c: usize = prob.constraints.iter().map(|c| c.rows()).sum();
    let mut kkt = Mat::zeros(m_v + m_c, m_v + m_c);
    let mut rhs = Vector::zeros(m_v + m_c);
    for (i, obj) in prob.objectives.iter().enumerate() {
        if let NodeObjective::Quadratic { q_mat, q } = obj {
            let r = l.node_range(i);
            kkt.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(q_mat);
            rhs.rows_range_mut(r).copy_from(q);
        }
    }
    let mut row = m_v;
    for c in &prob.constraints {
        let (ri, rj, m) = (l.node_range(c.i), l.node_range(c.j), c.rows());
        kkt.view_mut((row, ri.start), (m, ri.len())).copy_from(&c.a_ij);
        kkt.view_mut((row, rj.start), (m, rj.len())).copy_from(&c.a_ji);
        kkt.view_mut((ri.start, row), (ri.len(), m)).copy_from(&c.a_ij.transpose());
        kkt.view_mut((rj.start, row), (rj.len(), m)).copy_from(&c.a_ji.transpose());
        rhs.rows_mut(row, m).copy_from(&c.b);
        row += m;
    }
    if let Some(sol) = kkt.clone().lu().solve(&rhs) {
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol.rows(0, m_v).into_owned());
        }
    }
    // Redundant constraints make the KKT matrix singular; accept a
    // consistent least-squares solution when x is still unique.
    let (sol, resid) = linalg::min_norm_lstsq(&kkt, &rhs, 1e-12);
    if resid > 1e-9 * (1.0 + rhs.norm()) {
        return Err(PdmmError::Oracle(format!("inconsistent KKT system (residual {resid:e})")));
    }
    let a = kkt.view((m_v, 0), (m_c, m_v)).into_owned();
    let q = kkt.view((0, 0), (m_v, m_v)).into_owned();
    let null = linalg::complement_projector(&linalg::range_basis(&a.transpose(), 1e-12));
    let nb = linalg::range_basis(&null, 1e-8);
    if nb.ncols() > 0 {
        let e = linalg::sym_eigenvalues(&(nb.transpose() * &q * &nb));
        if !(e[0] > 1e-12 * e[e.len() - 1].abs().max(1.0)) {
            return Err(PdmmError::Oracle("singular KKT system: minimizer is not unique".into()));
        }
    }
    Ok(sol.rows(0, m_v).into_owned())
}

fn pnorm_consensus_oracle(prob: &ProblemInstance) -> Result<Vector> {
    let dim = consensus_dim(prob)?;
    let mut xbar = Vector::zeros(dim);
    let full = ScalarTolerance { grad: 0.0, width: 0.0 };
    for k in 0..dim {
        let terms: Vec<(f64, f64)> = prob
            .objectives
            .iter()
            .map(|o| match o {
                NodeObjective::PNormPower { p, a } => (*p as f64, a[k]),
                _ => unreachable!("checked by caller"),
            })
            .collect();
        let g = |t: f64| {
            terms
                .iter()
                .map(|&(p, a)| {
                    let u = t - a;
                    p * u.signum() * u.abs().powi(p as i32 - 1)
                })
                .sum::<f64>()
        };
        let hint = terms.iter().map(|t| t.1).sum::<f64>() / terms.len() as f64;
        xbar[k] = scalar_convex_minimize(g, hint, full).map_err(|e| PdmmError::Oracle(e.to_string()))?;
    }
    Ok(replicate(prob, &xbar))
}

/// Coordinatewise median; for an even count the midpoint of the two middle
/// values (every point between them is optimal).
fn l1_consensus_oracle(prob: &ProblemInstance) -> Result<Vector> {
    let dim = consensus_dim(prob)?;
    let mut xbar = Vector::zeros(dim);
    for k in 0..dim {
        let mut vals: Vec<f64> = prob
            .objectives
            .iter()
            .map(|o| match o {
                NodeObjective::L1 { a } => a[k],
                _ => unreachable!("checked by caller"),
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        xbar[k] = if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) };
    }
    Ok(replicate(prob, &xbar))
}

/// Local curvature `(min, max)` of a p-norm consensus objective at `x`:
/// extremes of `p(p−1)|x_k − a_k|^{p−2}` over nodes and coordinates.
pub fn pnorm_curvature_at(prob: &ProblemInstance, x: &Vector) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for (i, obj) in prob.objectives.iter().enumerate() {
        let NodeObjective::PNormPower { p, a } = obj else { return None };
        let xi = x.rows_range(prob.layout.node_range(i));
        let pf = *p as f64;
        for k in 0..a.len() {
            let h = pf * (pf - 1.0) * (xi[k] - a[k]).abs().powi(*p as i32 - 2);
            lo = lo.min(h);
            hi = hi.max(h);
        }
    }
    (lo.is_finite() && hi > 0.0).then_some((lo, hi))
}

/// Mean of the same second derivatives over all nodes and coordinates.
pub fn pnorm_mean_curvature_at(prob: &ProblemInstance, x: &Vector) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, obj) in prob.objectives.iter().enumerate() {
        let NodeObjective::PNormPower { p, a } = obj else { return None };
        let xi = x.rows_range(prob.layout.node_range(i));
        let pf = *p as f64;
        for k in 0..a.len() {
            sum += pf * (pf - 1.0) * (xi[k] - a[k]).abs().powi(*p as i32 - 2);
            count += 1;
        }
    }
    (count > 0 && sum > 0.0).then(|| sum / count as f64)
}

// ---- reference points ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GHatSource {
    /// Right-hand side with the `−x*` terms, consistent as given.
    Printed,
    /// Right-hand side from the stationarity conditions at `x*`.
    Stationarity,
    /// Even-iterate limit of a long plain run.
    LongRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointRef {
    pub x_star: Vector,
    pub z_tilde_0: Vector,
    pub z_tilde_1: Vector,
    pub g_hat: Vector,
    pub g_hat_source: GHatSource,
    /// Least-squares residual of the `−x*` right-hand side.
    pub printed_residual: f64,
}

impl FixedPointRef {
    pub fn trace_reference(&self, f_star: Option<f64>) -> TraceReference {
        TraceReference {
            z_tilde: Some((self.z_tilde_0.clone(), self.z_tilde_1.clone())),
            x_star: Some(self.x_star.clone()),
            f_star,
        }
    }
}

/// Projector onto `ran(C) + ran(PC)` as an orthonormal basis.
pub fn joint_range_basis(c: &Mat, p: &Mat) -> Mat {
    let pc = p * c;
    let mut stacked = Mat::zeros(c.nrows(), 2 * c.ncols());
    stacked.columns_mut(0, c.ncols()).copy_from(c);
    stacked.columns_mut(c.ncols(), c.ncols()).copy_from(&pc);
    linalg::range_basis(&stacked, SINGULAR_REL_TOL)
}

/// Component of `v` outside `ran(C) + ran(PC)`.
pub fn kernel_component(basis: &Mat, v: &Vector) -> Vector {
    v - basis * (basis.transpose() * v)
}

pub const LONG_RUN_ITERS: usize = 10_000;

/// `z⁽ᴷ⁾` of a plain run for the largest even `K ≤ iterations`.
pub fn long_run_limit(prob: &ProblemInstance, rho: f64, z0: &Vector, iterations: usize) -> Result<Vector> {
    let even = iterations - iterations % 2;
    let (state, _) = Pdmm::new(prob, rho)?.run(&PdmmConfig::new(rho, even), z0, None)?;
    Ok(state.z)
}

/// Reference points `z̃₀`, `z̃₁ = T_P z̃₀` of the even and odd subsequences.
pub fn reference_point(prob: &ProblemInstance, rho: f64, x_star: &Vector, z0: &Vector) -> Result<FixedPointRef> {
    let engine = Pdmm::new(prob, rho)?;
    let c = engine.c();
    let d = engine.d();
    let p = assemble_p(&prob.layout);
    let grad = prob
        .gradient(x_star)
        .ok_or_else(|| PdmmError::Parameter("reference points need differentiable objectives".into()))?;
    let r = c * x_star - d;
    let top = &grad + rho * c.transpose() * &r;
    let bottom = &grad + rho * c.transpose() * (&p * &r);
    let m_v = x_star.len();
    let stack = |a: &Vector, b: &Vector| {
        let mut g = Vector::zeros(2 * m_v);
        g.rows_mut(0, m_v).copy_from(a);
        g.rows_mut(m_v, m_v).copy_from(b);
        g
    };
    let mut system = Mat::zeros(2 * m_v, c.nrows());
    system.rows_mut(0, m_v).copy_from(&c.transpose());
    system.rows_mut(m_v, m_v).copy_from(&(c.transpose() * &p));

    let basis = joint_range_basis(c, &p);
    let kernel = kernel_component(&basis, z0);

    let printed = stack(&(&top - x_star), &(&bottom - x_star));
    let (w_printed, printed_residual) = linalg::min_norm_lstsq(&system, &printed, SINGULAR_REL_TOL);
    let consistent = |res: f64, g: &Vector| res <= GHAT_REL_TOL * g.norm().max(f64::MIN_POSITIVE) || res == 0.0;

    let (z_tilde_0, g_hat, source) = if consistent(printed_residual, &printed) {
        (w_printed + &kernel, printed, GHatSource::Printed)
    } else {
        let derived = stack(&top, &bottom);
        let (w, res) = linalg::min_norm_lstsq(&system, &derived, SINGULAR_REL_TOL);
        if res <= GHAT_REL_TOL * (1.0 + derived.norm()) {
            (w + &kernel, derived, GHatSource::Stationarity)
        } else {
            log::warn!("reference system inconsistent (residual {res:e}); using long-run limit");
            (long_run_limit(prob, rho, z0, LONG_RUN_ITERS)?, derived, GHatSource::LongRun)
        }
    };
    let z_tilde_1 = engine.apply(&z_tilde_0)?;
    Ok(FixedPointRef { x_star: x_star.clone(), z_tilde_0, z_tilde_1, g_hat, g_hat_source: source, printed_residual })
}

/// Fixed point of `T_P` closest to `z0` for a differentiable problem with
/// minimizer `x_star`.
pub fn fixed_point(prob: &ProblemInstance, rho: f64, x_star: &Vector, z0: &Vector) -> Result<Vector> {
    let c = assemble_c(prob)?;
    let d = assemble_d(prob);
    let p = assemble_p(&prob.layout);
    let grad = prob
        .gradient(x_star)
        .ok_or_else(|| PdmmError::Parameter("fixed points need differentiable objectives".into()))?;
    let (m_e, m_v) = (c.nrows(), c.ncols());
    let mut system = Mat::zeros(m_v + m_e, m_e);
    system.rows_mut(0, m_v).copy_from(&c.transpose());
    system.rows_mut(m_v, m_e).copy_from(&(Mat::identity(m_e, m_e) - &p));
    let mut rhs = Vector::zeros(m_v + m_e);
    rhs.rows_mut(0, m_v).copy_from(&grad);
    let (lambda, res) = linalg::min_norm_lstsq(&system, &rhs, SINGULAR_REL_TOL);
    if res > GHAT_REL_TOL * (1.0 + rhs.norm()) {
        return Err(PdmmError::Oracle(format!("no dual solution at x* (residual {res:e})")));
    }
    let z_star = lambda + rho * (&c * x_star - d);
    let row_space = linalg::range_basis(&system.transpose(), SINGULAR_REL_TOL);
    Ok(&z_star + kernel_component(&row_space, &(z0 - &z_star)))
}

/// Error metrics of iterate `k` against whatever references are known.
pub fn error_metrics(prob: &ProblemInstance, k: usize, z: &Vector, x: &Vector, reference: Option<&TraceReference>) -> IterationRecord {
    let objective = prob.objective_value(x);
    let (even, odd, primal, subopt) = match reference {
        Some(r) => (
            r.z_tilde.as_ref().map(|(z0, _)| linalg::dist_sq(z, z0)),
            r.z_tilde.as_ref().map(|(_, z1)| linalg::dist_sq(z, z1)),
            r.x_star.as_ref().map(|xs| linalg::dist_sq(x, xs)),
            r.f_star.map(|f| (objective - f).powi(2)),
        ),
        None => (None, None, None, None),
    };
    IterationRecord {
        k,
        aux_error_even_ref: even,
        aux_error_odd_ref: odd,
        primal_sq_error: primal,
        objective_subopt: subopt,
        objective,
        fp_residual_sq: f64::NAN,
    }
}

// ---- dual gradient map -----------------------------------------------------

/// `λ ↦ C ∇f*(Cᵀλ) = C Q⁻¹(Cᵀλ + q)` for a quadratic problem.
pub struct DualGradientMap {
    c: Mat,
    q_inv: Mat,
    q: Vector,
}

impl DualGradientMap {
    pub fn new(prob: &ProblemInstance) -> Result<Self> {
        let l = &prob.layout;
        let mut q_inv = Mat::zeros(l.m_v, l.m_v);
        let mut q = Vector::zeros(l.m_v);
        for (i, obj) in prob.objectives.iter().enumerate() {
            let NodeObjective::Quadratic { q_mat, q: qi } = obj else {
                return Err(PdmmError::Parameter("dual gradient map needs quadratic objectives".into()));
            };
            let inv = q_mat
                .clone()
                .try_inverse()
                .ok_or_else(|| PdmmError::Degenerate(format!("Q_{i} is singular")))?;
            let r = l.node_range(i);
            q_inv.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&inv);
            q.rows_range_mut(r).copy_from(qi);
        }
        Ok(DualGradientMap { c: assemble_c(prob)?, q_inv, q })
    }

    pub fn apply(&self, lambda: &Vector) -> Vector {
        &self.c * (&self.q_inv * (self.c.transpose() * lambda + &self.q))
    }

    /// The linear part `C Q⁻¹ Cᵀ`.
    pub fn linear_part(&self) -> Mat {
        &self.c * &self.q_inv * self.c.transpose()
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::instances;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_3;

    fn scalar_quad(lin: f64) -> NodeObjective {
        NodeObjective::Quadratic { q_mat: Mat::from_element(1, 1, 1.0), q: Vector::from_element(1, lin) }
    }

    fn two_node() -> ProblemInstance {
        ProblemInstance::consensus(Graph::path(2).unwrap(), vec![scalar_quad(0.0), scalar_quad(2.0)]).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn singular_extreme_examples() {
        let c = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(singular_extremes(&c).unwrap(), (1.0, 1.0));
        let (a, b) = singular_extremes(&(Mat::identity(3, 3) * 3.0)).unwrap();
        assert!((a - 3.0).abs() < 1e-14 && (b - 3.0).abs() < 1e-14);
        let padded = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(singular_extremes(&padded).unwrap(), (1.0, 1.0));
        assert!(matches!(singular_extremes(&Mat::zeros(2, 2)), Err(PdmmError::Degenerate(_))));
    }

    #[test]
    fn friedrichs_examples() {
        let u = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let w = Mat::from_column_slice(3, 1, &[FRAC_PI_3.cos(), FRAC_PI_3.sin(), 0.0]);
        assert!((friedrichs_angle_of_bases(&u, &w).unwrap() - FRAC_PI_3).abs() < 1e-14);
        let id = Mat::identity(3, 3);
        assert_eq!(friedrichs_angle(&id, &id).unwrap(), FRAC_PI_2);
        let e2 = Mat::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!((friedrichs_angle_of_bases(&u, &e2).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(friedrichs_angle(&Mat::zeros(3, 3), &id).is_err());
    }

    #[test]
    fn small_angles_are_resolved() {
        // cos-based evaluation alone loses about half the digits here
        let t: f64 = 1e-5;
        let u = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let w = Mat::from_column_slice(2, 1, &[t.cos(), t.sin()]);
        let got = principal_angles(&u, &w)[0];
        assert!((got - t).abs() < 1e-15, "{got}");
    }

    #[test]
    fn friedrichs_matches_brute_force_oracle() {
        // oracle: all principal cosines from an eigen-decomposition of
        // WᵀUUᵀW, then the smallest nonzero angle
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = linalg::range_basis(&instances::random_matrix(6, 2, &mut rng), 1e-12);
            let w = linalg::range_basis(&instances::random_matrix(6, 3, &mut rng), 1e-12);
            let m = w.transpose() * &u * u.transpose() * &w;
            let mut cos2 = linalg::sym_eigenvalues(&m);
            cos2.reverse();
            let want = cos2[..2].iter().map(|c| c.clamp(0.0, 1.0).sqrt().acos()).find(|&t| t > ANGLE_TOL).unwrap();
            assert!((friedrichs_angle_of_bases(&u, &w).unwrap() - want).abs() < 1e-7);
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(contraction_delta(1.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        let opt = optimal_rho(1.0, 9.0, 1.0, 1.0);
        assert!((opt.kappa - 9.0).abs() < 1e-15);
        assert!((contraction_delta(opt.rho_star, 1.0, 9.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        let big = contraction_delta(1e12, 1.0, 2.0, 1.0, 1.0);
        assert!(big < 1.0 && big > 1.0 - 1e-11);
    }

    #[test]
    fn optimal_rho_examples() {
        let o = optimal_rho(1.0, 1.0, 1.0, 1.0);
        assert_eq!((o.rho_star, o.kappa, o.delta_star), (1.0, 1.0, 0.0));
        let o = optimal_rho(1.0, 4.0, 2.0, 1.0);
        assert!((o.rho_star - 1.0).abs() < 1e-15);
        assert!((o.kappa - 16.0).abs() < 1e-14);
        assert!((o.delta_star - 0.6).abs() < 1e-15);
    }

    #[test]
    fn gamma_examples() {
        assert!((gap_rate_gamma(0.0, 0.5f64.acos()).unwrap() - 0.25).abs() < 1e-15);
        for d in [0.0, 0.3, 0.9] {
            assert!((gap_rate_gamma(d, FRAC_PI_2).unwrap() - d).abs() < 1e-15);
        }
        assert!(gap_rate_gamma(1.0, 1.0).is_err());
    }

    #[test]
    fn gamma_is_spectral_radius_of_planar_gap_operator() {
        // two lines at angle θ in the plane; the GAP operator's largest
        // eigenvalue from its 2x2 characteristic polynomial
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let d: f64 = rng.random_range(0.0..0.99);
            let th: f64 = rng.random_range(0.01..FRAC_PI_2);
            let l1 = v(&[1.0, 0.0]);
            let l2 = v(&[th.cos(), th.sin()]);
            let id = Mat::identity(2, 2);
            let p1 = &id - &l1 * l1.transpose();
            let p2 = &id - &l2 * l2.transpose();
            let t = ((1.0 - d) * p2 + d * &id) * ((1.0 - d) * p1 + d * &id);
            let (tr, det) = (t.trace(), t.determinant());
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let rho = (tr / 2.0 + disc).abs().max((tr / 2.0 - disc).abs());
            assert!((gap_rate_gamma(d, th).unwrap() - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn bisection_hits_target() {
        for th in [0.4, 0.8, 1.2, FRAC_PI_2] {
            let d = delta_for_gamma(0.9, th).unwrap();
            assert!((gap_rate_gamma(d, th).unwrap() - 0.9).abs() < 1e-12);
        }
        assert!((delta_for_gamma(0.9, FRAC_PI_2).unwrap() - 0.9).abs() < 1e-15);
        assert!(delta_for_gamma(0.9, 0.05).is_err());
    }

    #[test]
    fn oracle_examples() {
        let x = centralized_oracle(&two_node()).unwrap();
        assert!((x - v(&[1.0, 1.0])).amax() < 1e-15);

        let g = Graph::path(2).unwrap();
        let pn = ProblemInstance::consensus(
            g.clone(),
            vec![NodeObjective::PNormPower { p: 4, a: v(&[0.0]) }, NodeObjective::PNormPower { p: 4, a: v(&[2.0]) }],
        )
        .unwrap();
        assert!((centralized_oracle(&pn).unwrap() - v(&[1.0, 1.0])).amax() < 1e-12);

        let l1 = ProblemInstance::consensus(
            Graph::path(3).unwrap(),
            [0.0, 1.0, 5.0].iter().map(|&a| NodeObjective::L1 { a: v(&[a]) }).collect(),
        )
        .unwrap();
        let x = centralized_oracle(&l1).unwrap();
        // grid oracle of Σ|t − a_i|
        let f = |t: f64| [0.0, 1.0, 5.0].iter().map(|a| (t - a).abs()).sum::<f64>();
        let best = (0..=6000).map(|k| k as f64 * 1e-3).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
        assert!((x[0] - best).abs() < 1e-12 && x[0] == 1.0);
    }

    #[test]
    fn kkt_oracle_is_feasible_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prob = instances::random_affine_quadratic(6, 0.6, 2, 1, 3, &mut rng).unwrap();
        let x = centralized_oracle(&prob).unwrap();
        assert!(prob.constraint_residual(&x).amax() < 1e-10);
        // gradient orthogonal to the feasible directions
        let c = assemble_c(&prob).unwrap();
        let p = assemble_p(&prob.layout);
        let a = &c + &p * &c;
        let null = linalg::complement_projector(&linalg::range_basis(&a.transpose(), 1e-12));
        assert!((null * prob.gradient(&x).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn reference_point_two_node() {
        let prob = two_node();
        let x_star = v(&[1.0, 1.0]);
        let r = reference_point(&prob, 1.0, &x_star, &v(&[0.3, -0.8])).unwrap();
        // kernel is trivial: no dependence on z0
        let r2 = reference_point(&prob, 1.0, &x_star, &v(&[5.0, 7.0])).unwrap();
        assert!((&r.z_tilde_0 - &r2.z_tilde_0).amax() < 1e-14);
        assert_eq!(r.g_hat_source, GHatSource::Stationarity);
        // Cᵀz = ∇f(x*) + ρCᵀ(Cx* − d) = (1, −1) + (1, 1) with C = diag(1, −1)
        assert!((&r.z_tilde_0 - v(&[2.0, 0.0])).amax() < 1e-14);
        let engine = Pdmm::new(&prob, 1.0).unwrap();
        assert!((engine.apply(&r.z_tilde_0).unwrap() - &r.z_tilde_1).norm() < 1e-9);
    }

    #[test]
    fn reference_point_shifts_with_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = instances::connected_er(8, 0.5, 3, 100).unwrap().0;
        let prob = instances::consensus_quadratic(g, 2, 1.0, 3.0, &mut rng).unwrap();
        let x_star = centralized_oracle(&prob).unwrap();
        let c = assemble_c(&prob).unwrap();
        let p = assemble_p(&prob.layout);
        let basis = joint_range_basis(&c, &p);
        let z0 = instances::random_vector(prob.layout.m_e, &mut rng);
        let n = kernel_component(&basis, &instances::random_vector(prob.layout.m_e, &mut rng));
        assert!(n.norm() > 1e-3, "instance should have a kernel");
        let a = reference_point(&prob, 0.7, &x_star, &z0).unwrap();
        let b = reference_point(&prob, 0.7, &x_star, &(&z0 + &n)).unwrap();
        assert!((&b.z_tilde_0 - &a.z_tilde_0 - &n).amax() < 1e-12);
    }

    #[test]
    fn reference_point_is_even_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = instances::connected_er(6, 0.6, 1, 100).unwrap().0;
        let prob = instances::consensus_quadratic(g, 2, 1.0, 2.0, &mut rng).unwrap();
        let x_star = centralized_oracle(&prob).unwrap();
        let z0 = instances::random_vector(prob.layout.m_e, &mut rng);
        let r = reference_point(&prob, 1.0, &x_star, &z0).unwrap();
        let limit = long_run_limit(&prob, 1.0, &z0, 4000).unwrap();
        assert!((limit - &r.z_tilde_0).amax() < 1e-6);
    }

    #[test]
    fn fixed_point_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = instances::connected_er(7, 0.5, 2, 100).unwrap().0;
        let prob = instances::consensus_quadratic(g, 3, 0.5, 2.0, &mut rng).unwrap();
        let x_star = centralized_oracle(&prob).unwrap();
        let z0 = instances::random_vector(prob.layout.m_e, &mut rng);
        let zs = fixed_point(&prob, 0.8, &x_star, &z0).unwrap();
        let engine = Pdmm::new(&prob, 0.8).unwrap();
        assert!((engine.apply(&zs).unwrap() - &zs).amax() < 1e-10);
    }

    #[test]
    fn epsilon_examples() {
        let report = SpectralReport {
            sigma_max: 1.0,
            sigma_min_nz: 1.0,
            mu: 1.0,
            beta: 1.0,
            kappa: 1.0,
            theta_f: FRAC_PI_2,
            rho: 1.0,
            delta: 1.0,
            gamma: 1.0,
            rho_star: 1.0,
            delta_star: 0.0,
            epsilon: None,
        };
        let (z0, zt) = (v(&[1.0, 2.0]), v(&[0.0, 0.0]));
        assert_eq!(epsilon_bound(&report, 1.0, &z0, &zt).unwrap(), 5.0);
        assert_eq!(epsilon_bound(&report, 1.0, &zt, &zt).unwrap(), 0.0);
        assert!((epsilon_bound(&report, 1.0, &(z0 * 3.0), &zt).unwrap() - 45.0).abs() < 1e-12);
        let zero = SpectralReport { gamma: 0.0, ..report };
        assert!(matches!(epsilon_bound(&zero, 1.0, &zt, &zt), Err(PdmmError::Degenerate(_))));
    }

    #[test]
    fn error_metrics_examples() {
        let prob = two_node();
        let x_star = v(&[1.0, 1.0]);
        let r = reference_point(&prob, 1.0, &x_star, &Vector::zeros(2)).unwrap();
        let tr = r.trace_reference(Some(prob.objective_value(&x_star)));
        let rec = error_metrics(&prob, 2, &r.z_tilde_0, &x_star, Some(&tr));
        assert_eq!(rec.primal_sq_error, Some(0.0));
        assert_eq!(rec.aux_error(), Some(0.0));
        assert_eq!(rec.objective_subopt, Some(0.0));
        // one step from z = (1, −1) lands on x = (0.5, 1.5), z = (2, 0)
        let rec = error_metrics(&prob, 1, &v(&[2.0, 0.0]), &v(&[0.5, 1.5]), Some(&tr));
        assert!((rec.primal_sq_error.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spectral_report_at_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = instances::connected_er(10, 0.4, 4, 100).unwrap().0;
        let prob = instances::consensus_quadratic(g, 3, 1.0, 5.0, &mut rng).unwrap();
        let rep = SpectralReport::for_problem(&prob, None).unwrap();
        assert!((rep.delta - rep.delta_star).abs() < 1e-12);
        assert!(rep.gamma < 1.0 && rep.gamma >= rep.delta);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"theta_F\""));
    }
}
