use pdmm::analysis;
use pdmm::experiments::{quad_bound, run_experiment, ExperimentConfig, ExperimentKind};
use pdmm::parallel::Execution;

fn small(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    cfg.seed = 5;
    match kind {
        ExperimentKind::PnormSweep => {
            cfg.p_values = vec![3, 5];
            cfg.iterations = Some(60);
            cfg.rho_sweep = true;
            cfg.rho_sweep_points = 3;
        }
        ExperimentKind::L1Compare => cfg.iterations = Some(200),
        ExperimentKind::QuadraticBound => cfg.n_instances = 6,
    }
    cfg
}

#[test]
fn identical_config_gives_identical_files_in_both_modes() {
    for kind in [ExperimentKind::PnormSweep, ExperimentKind::L1Compare, ExperimentKind::QuadraticBound] {
        let cfg = small(kind);
        let a = run_experiment(&cfg, Execution::Parallel).unwrap();
        let b = run_experiment(&cfg, Execution::Parallel).unwrap();
        let c = run_experiment(&cfg, Execution::Sequential).unwrap();
        assert_eq!(a.artifacts, b.artifacts, "{kind:?}");
        assert_eq!(a.artifacts, c.artifacts, "{kind:?}");
        assert_eq!(a.artifacts.last().unwrap().name, "manifest.json");
    }
}

#[test]
fn manifest_lists_files_and_hash() {
    let cfg = small(ExperimentKind::PnormSweep);
    let out = run_experiment(&cfg, Execution::Parallel).unwrap();
    let names: Vec<&str> = out.artifacts.iter().map(|a| a.name.as_str()).collect();
    assert!(names.contains(&"trace_pnorm_p3.csv") && names.contains(&"sweep_pnorm.csv"));
    assert_eq!(out.manifest.config_hash, cfg.hash());
    assert_eq!(out.manifest.files.len(), out.artifacts.len() - 1);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn designed_instances_hit_the_target_contraction() {
    let cfg = small(ExperimentKind::QuadraticBound);
    let out = quad_bound::run_quadratic_bound(&cfg, Execution::Parallel).unwrap();
    assert!(out.failures.is_empty());
    for inst in &out.instances {
        let s = &inst.report.spectral;
        let delta = analysis::contraction_delta(s.rho_star, s.mu, s.beta, s.sigma_max, s.sigma_min_nz);
        assert!((delta - inst.report.delta_target).abs() < 1e-9);
        assert!((s.gamma - cfg.gamma_target).abs() < 1e-9);
        assert!(inst.report.fejer_violations.is_empty());
    }
}

#[test]
fn csv_header_is_frozen() {
    let out = run_experiment(&small(ExperimentKind::L1Compare), Execution::Sequential).unwrap();
    let plain = out.artifacts.iter().find(|a| a.name == "trace_l1_plain.csv").unwrap();
    assert_eq!(
        plain.contents.lines().next().unwrap(),
        "k,aux_error_even_ref,aux_error_odd_ref,primal_sq_error,objective_subopt,fp_residual_sq"
    );
    assert_eq!(plain.contents.lines().count(), 201);
}
