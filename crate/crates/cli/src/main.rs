//! `pdmm` command-line harness.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdmm::analysis::{self, SpectralReport};
use pdmm::experiments::{self, write_artifacts, Artifact, ExperimentConfig, ExperimentKind, RhoMode, Z0Scaling};
use pdmm::graph::Graph;
use pdmm::instances;
use pdmm::parallel::Execution;
use pdmm::problem::{assemble_c, assemble_p, ProblemInstance, ProblemSpec};
use pdmm::stepsize;
use pdmm::PdmmError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "pdmm", version, about = "PDMM experiments and analysis")]
struct Cli {
    /// Run all work on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Consensus on p-th powers of p-norms, one trace per p.
    Pnorm(PnormArgs),
    /// L1 consensus with plain and averaged PDMM.
    L1(L1Args),
    /// Geometric-rate check on designed quadratic instances.
    QuadBound(QuadArgs),
    /// Spectral report and centralized solution of a problem file.
    Analyze(AnalyzeArgs),
    /// Distributed step-size selection by min/max diffusion.
    Stepsize(StepsizeArgs),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of nodes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Edge probability of the random graph (default ln N / N).
    #[arg(long)]
    er_prob: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory (default results/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PnormArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated exponents.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<u32>>,
    #[arg(long, value_parser = parse_rho_mode)]
    rho_mode: Option<RhoMode>,
    /// Also emit iterations-to-precision over a grid of step sizes.
    #[arg(long)]
    rho_sweep: bool,
}

#[derive(Args)]
struct L1Args {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct QuadArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    instances: Option<usize>,
    /// Target rate bound.
    #[arg(long)]
    gamma: Option<f64>,
    /// Variable dimension per node.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_parser = parse_z0_scaling)]
    z0_scaling: Option<Z0Scaling>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Problem JSON file.
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    /// Also write report_analyze.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StepsizeArgs {
    /// Problem JSON file with quadratic objectives. Without it a random
    /// consensus quadratic is generated.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Diffusion rounds (default: graph diameter).
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rho_mode(s: &str) -> Result<RhoMode, String> {
    match s {
        "fixed" => Ok(RhoMode::Fixed),
        "optimal" => Ok(RhoMode::Optimal),
        _ => Err(format!("expected fixed or optimal, got {s}")),
    }
}

fn parse_z0_scaling(s: &str) -> Result<Z0Scaling, String> {
    match s {
        "aux_unit" => Ok(Z0Scaling::AuxUnit),
        "primal_unit" => Ok(Z0Scaling::PrimalUnit),
        _ => Err(format!("expected aux_unit or primal_unit, got {s}")),
    }
}

enum Failure {
    Io(String),
    Config(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Config(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<PdmmError> for Failure {
    fn from(e: PdmmError) -> Self {
        let msg = e.to_string();
        match e {
            PdmmError::Io(_) => Failure::Io(msg),
            PdmmError::Parameter(_)
            | PdmmError::Structure(_)
            | PdmmError::Assembly(_)
            | PdmmError::UnsupportedPairing { .. }
            | PdmmError::Json(_) => Failure::Config(msg),
            PdmmError::Solver { .. } | PdmmError::Degenerate(_) | PdmmError::Oracle(_) => Failure::Numerical(msg),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("invalid {what} {}: {e}", path.display())))
}

/// Loads the config file (if any) and checks that it does not name a
/// different experiment than the subcommand.
fn base_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, Failure> {
    let Some(path) = &common.config else {
        return Ok(ExperimentConfig::new(kind));
    };
    let value: serde_json::Value = read_json(path, "config")?;
    if let Some(named) = value.get("kind") {
        let named: ExperimentKind =
            serde_json::from_value(named.clone()).map_err(|e| Failure::Config(format!("invalid kind in config: {e}")))?;
        if named != kind {
            return Err(Failure::Config(format!("config is for {named:?}, not {kind:?}")));
        }
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Failure::Config(format!("invalid config {}: {e}", path.display())))?;
    cfg.kind = kind;
    Ok(cfg)
}

fn apply_common(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(n) = common.n {
        cfg.n_nodes = n;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.iters.is_some() {
        cfg.iterations = common.iters;
    }
    if common.er_prob.is_some() {
        cfg.er_probability = common.er_prob;
    }
    if common.rho.is_some() {
        cfg.rho = common.rho;
        // an explicit step size means a fixed one
        cfg.rho_mode = Some(RhoMode::Fixed);
    }
    if common.out.is_some() {
        cfg.output_dir = common.out.clone();
    }
}

fn run_configured(cfg: ExperimentConfig, exec: Execution) -> Result<(), Failure> {
    cfg.validate()?;
    let out_dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.kind.tag()));
    let output = experiments::run_experiment(&cfg, exec)?;
    write_artifacts(&out_dir, &output.artifacts)?;
    print_json(&output.manifest.summary);
    log::info!("wrote {} files to {}", output.artifacts.len(), out_dir.display());
    if output.failures > 0 {
        return Err(Failure::Numerical(format!("{} runs failed; see the reports", output.failures)));
    }
    Ok(())
}

/// Prints to stdout, ignoring a closed pipe.
fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).unwrap_or_default();
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn emit(out: Option<&Path>, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    print_json(value);
    if let Some(dir) = out {
        write_artifacts(dir, &[Artifact::json(name, value)?])?;
    }
    Ok(())
}

fn load_problem(path: &Path) -> Result<ProblemInstance, Failure> {
    let spec: ProblemSpec = read_json(path, "problem")?;
    Ok(spec.into_problem()?)
}

fn analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let prob = load_problem(&args.problem)?;
    let x_star = analysis::centralized_oracle(&prob)?;
    let mut report = serde_json::json!({
        "x_star": x_star.iter().collect::<Vec<_>>(),
        "f_star": prob.objective_value(&x_star),
    });
    if prob.layout.m_e > 0 {
        let c = assemble_c(&prob)?;
        let (sigma_max, sigma_min_nz) = analysis::singular_extremes(&c)?;
        report["sigma_max"] = sigma_max.into();
        report["sigma_min_nz"] = sigma_min_nz.into();
        report["theta_F"] = analysis::friedrichs_angle(&c, &assemble_p(&prob.layout))?.into();
        if prob.curvature_bounds().is_some() {
            let spectral = SpectralReport::for_problem(&prob, args.rho)?;
            report["spectral"] = serde_json::to_value(spectral).map_err(PdmmError::from)?;
        }
    }
    emit(args.out.as_deref(), "report_analyze.json", &report)
}

fn step_size(args: &StepsizeArgs) -> Result<(), Failure> {
    let prob = match &args.problem {
        Some(path) => load_problem(path)?,
        None => {
            if args.n == 0 || args.dim == 0 {
                return Err(Failure::Config("n and dim must be positive".into()));
            }
            let p = if args.n > 1 { (args.n as f64).ln() / args.n as f64 } else { 0.0 };
            let (graph, _, _): (Graph, _, _) = instances::connected_er(args.n, p, args.seed, 10_000)?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            instances::consensus_quadratic(graph, args.dim, 1.0, 10.0, &mut rng)?
        }
    };
    let result = stepsize::select_step_size(&prob, args.rounds)?;
    let report = serde_json::json!({
        "diameter": prob.graph.diameter().ok(),
        "rounds": result.rounds.len(),
        "total_transmissions": result.total_transmissions(),
        "rho_star": result.rho_star,
        "estimates": result.estimates,
        "warning": result.warning,
    });
    emit(args.out.as_deref(), "report_stepsize.json", &report)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Pnorm(a) => {
            let mut cfg = base_config(ExperimentKind::PnormSweep, &a.common)?;
            apply_common(&mut cfg, &a.common);
            if let Some(p) = a.p {
                cfg.p_values = p;
            }
            if a.rho_mode.is_some() {
                cfg.rho_mode = a.rho_mode;
            }
            cfg.rho_sweep |= a.rho_sweep;
            run_configured(cfg, exec)
        }
        Command::L1(a) => {
            let mut cfg = base_config(ExperimentKind::L1Compare, &a.common)?;
            apply_common(&mut cfg, &a.common);
            if a.alpha.is_some() {
                cfg.alpha = a.alpha;
            }
            run_configured(cfg, exec)
        }
        Command::QuadBound(a) => {
            let mut cfg = base_config(ExperimentKind::QuadraticBound, &a.common)?;
            apply_common(&mut cfg, &a.common);
            if let Some(n) = a.instances {
                cfg.n_instances = n;
            }
            if let Some(g) = a.gamma {
                cfg.gamma_target = g;
            }
            if let Some(d) = a.dim {
                cfg.node_dim = d;
            }
            if let Some(z) = a.z0_scaling {
                cfg.z0_scaling = z;
            }
            run_configured(cfg, exec)
        }
        Command::Analyze(a) => analyze(&a),
        Command::Stepsize(a) => step_size(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
