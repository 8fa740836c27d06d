use ipsk_core::config::{opinion, KernelSpec, Scale};
use ipsk_core::estimator::assemble;
use ipsk_core::eval::{coercivity_estimate, convergence_study, long_t_study};
use ipsk_core::hypospace::{build_basis_on_samples, PartitionMode};
use ipsk_core::measure::empirical_rho;
use ipsk_core::model::{InitialDistribution, InteractionKernel, SystemParams};
use ipsk_core::sim::simulate_many;

fn opinion_params() -> SystemParams {
    SystemParams::new(10, 1, 0.1, InteractionKernel::opinion()).unwrap()
}

fn init() -> InitialDistribution {
    InitialDistribution::UniformBox { lo: 0.0, hi: 8.0 }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn coercivity_is_stable_across_replicates() {
    let cfg = opinion(Scale::Desk);
    let lambdas: Vec<f64> = (0..5)
        .map(|rep| {
            let trajs = simulate_many(&opinion_params(), &init(), 5.0, 0.01, 100 + rep, 0, 1024).unwrap();
            let cells = cfg.basis.cells_for(&trajs).unwrap();
            let rho = empirical_rho(&trajs, 8 * cells).unwrap();
            let basis = build_basis_on_samples(&trajs, &rho, cells, 0, PartitionMode::Uniform).unwrap();
            coercivity_estimate(&assemble(&trajs, &basis).unwrap())
        })
        .collect();
    let mid = median(lambdas.clone());
    assert!(mid > 0.0);
    for l in &lambdas {
        assert!((l - mid).abs() <= 0.5 * mid, "{lambdas:?}");
    }
}

#[test]
fn coercivity_grows_with_data_on_a_fixed_basis() {
    let params = opinion_params();
    let pilot = simulate_many(&params, &init(), 5.0, 0.01, 200, 0, 256).unwrap();
    let rho = empirical_rho(&pilot, 1000).unwrap();
    let basis = build_basis_on_samples(&pilot, &rho, 40, 0, PartitionMode::Uniform).unwrap();
    let lambda_at = |m: usize| {
        let values = (0..5)
            .map(|rep| {
                let trajs = simulate_many(&params, &init(), 5.0, 0.01, 300 + rep, 1000 * m as u64, m).unwrap();
                coercivity_estimate(&assemble(&trajs, &basis).unwrap())
            })
            .collect();
        median(values)
    };
    let (small, large) = (lambda_at(16), lambda_at(64));
    assert!(large >= small, "median lambda_min {small} at M = 16, {large} at M = 64");
}

#[test]
fn in_span_noiseless_convergence_is_degenerate() {
    let mut cfg = opinion(Scale::Desk);
    cfg.system.sigma = 0.0;
    cfg.system.kernel = KernelSpec::Constant { value: 1.0 };
    cfg.m_rho = 64;
    let fit = convergence_study(&cfg, &[8, 16, 32], 2, 5).unwrap();
    for p in &fit.points {
        assert!(p.mean_error < 1e-10, "M = {}: {}", p.x, p.mean_error);
    }
    assert!(fit.is_degenerate());
}

#[test]
fn error_depends_on_the_product_m_t() {
    let cfg = opinion(Scale::Desk);
    let grid = [(1, 400.0), (2, 200.0), (4, 100.0)];
    let fit = long_t_study(&cfg, &grid, 4.0, 16, Some(PartitionMode::RhoAdaptive), 3, 7).unwrap();
    let errors: Vec<f64> = fit.points.iter().map(|p| p.mean_error).collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    for e in &errors {
        assert!((e - mean).abs() <= 0.5 * mean, "{errors:?}");
    }
    assert!(fit.points.iter().all(|p| p.x == 400.0));
}

#[test]
fn single_point_long_t_grid_is_degenerate() {
    let cfg = opinion(Scale::Desk);
    let fit = long_t_study(&cfg, &[(2, 5.0)], 4.0, 4, None, 1, 3).unwrap();
    assert!(fit.is_degenerate());
}
