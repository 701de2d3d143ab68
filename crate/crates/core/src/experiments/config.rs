use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PdmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    PnormSweep,
    L1Compare,
    QuadraticBound,
}

impl ExperimentKind {
    /// Short tag used in output file names.
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::PnormSweep => "pnorm",
            ExperimentKind::L1Compare => "l1",
            ExperimentKind::QuadraticBound => "quad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    Fixed,
    Optimal,
}

/// How the quadratic-bound start `z⁰` is scaled around `z̃₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Z0Scaling {
    /// `‖z⁰ − z̃₀‖² = γ`, so the auxiliary-error bound is exactly `γᵏ`.
    #[default]
    AuxUnit,
    /// `ε = 1` in the primal bound, i.e. `‖z⁰ − z̃₀‖² = ρ σ_min≠0² γ / σ_max²`.
    PrimalUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n_nodes: usize,
    /// Edge probability; `ln N / N` when absent.
    pub er_probability: Option<f64>,
    pub seed: u64,
    /// Per-kind default: 180 (p-norm), 2000 (L1), 120 (quadratic bound).
    pub iterations: Option<usize>,
    /// Per-kind default: optimal for p-norm and quadratic bound, fixed for L1.
    pub rho_mode: Option<RhoMode>,
    /// Step size in fixed mode; defaults to ½.
    pub rho: Option<f64>,
    /// Averaging weight of the averaged L1 run; defaults to ½.
    pub alpha: Option<f64>,
    pub p_values: Vec<u32>,
    /// Also emit iterations-to-precision over a log grid of step sizes.
    pub rho_sweep: bool,
    pub rho_sweep_points: usize,
    /// The grid spans `[ρ*/span, span·ρ*]`.
    pub rho_sweep_span: f64,
    pub sweep_tol: f64,
    pub sweep_max_iter: usize,
    pub n_instances: usize,
    pub gamma_target: f64,
    pub node_dim: usize,
    pub z0_scaling: Z0Scaling,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::PnormSweep,
            n_nodes: 10,
            er_probability: None,
            seed: 0,
            iterations: None,
            rho_mode: None,
            rho: None,
            alpha: None,
            p_values: (3..=10).collect(),
            rho_sweep: false,
            rho_sweep_points: 25,
            rho_sweep_span: 30.0,
            sweep_tol: 1e-5,
            sweep_max_iter: 20_000,
            n_instances: 200,
            gamma_target: 0.9,
            node_dim: 3,
            z0_scaling: Z0Scaling::AuxUnit,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig { kind, ..Default::default() }
    }

    pub fn probability(&self) -> f64 {
        self.er_probability.unwrap_or_else(|| {
            let n = self.n_nodes as f64;
            if self.n_nodes > 1 { n.ln() / n } else { 0.0 }
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(match self.kind {
            ExperimentKind::PnormSweep => 180,
            ExperimentKind::L1Compare => 2000,
            ExperimentKind::QuadraticBound => 120,
        })
    }

    pub fn rho_mode(&self) -> RhoMode {
        self.rho_mode.unwrap_or(match self.kind {
            ExperimentKind::L1Compare => RhoMode::Fixed,
            _ => RhoMode::Optimal,
        })
    }

    pub fn fixed_rho(&self) -> f64 {
        self.rho.unwrap_or(0.5)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.5)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PdmmError::Parameter(m));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive".into());
        }
        if self.node_dim == 0 {
            return bad("node_dim must be positive".into());
        }
        if self.iterations() == 0 {
            return bad("iterations must be positive".into());
        }
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("er_probability must lie in [0, 1], got {p}"));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad(format!("rho must be positive, got {rho}"));
            }
        }
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {alpha}"));
        }
        match self.kind {
            ExperimentKind::PnormSweep => {
                if self.p_values.is_empty() || self.p_values.iter().any(|&p| p < 2) {
                    return bad("p_values must be nonempty with every p >= 2".into());
                }
                if self.rho_sweep && (self.rho_sweep_points == 0 || !(self.rho_sweep_span >= 1.0)) {
                    return bad("rho sweep needs at least one point and span >= 1".into());
                }
                if self.rho_sweep && (self.sweep_max_iter == 0 || !(self.sweep_tol > 0.0)) {
                    return bad("rho sweep needs positive tolerance and iteration cap".into());
                }
            }
            ExperimentKind::QuadraticBound => {
                if self.n_instances == 0 {
                    return bad("n_instances must be positive".into());
                }
                if !(self.gamma_target > 0.0 && self.gamma_target < 1.0) {
                    return bad(format!("gamma_target must lie in (0, 1), got {}", self.gamma_target));
                }
                if self.n_nodes < 2 {
                    return bad("quadratic bound needs at least two nodes".into());
                }
            }
            ExperimentKind::L1Compare => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
