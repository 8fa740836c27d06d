#[allow(dead_code)]
#[path = "../../validation/src/checks.rs"]
mod checks;

use checks::*;
use ipsk_core::config::{opinion, Scale};
use ipsk_core::eval::gap_study;
use ipsk_core::measure::autocorr_time;
use ipsk_core::model::{lj_phi, lj_phi_derivative, InteractionKernel, LennardJones};
use ipsk_core::sim::{drift, simulate_many, subsample};

fn expect(check: Check) {
    match check {
        Ok(msg) => eprintln!("{msg}"),
        Err(msg) => panic!("{msg}"),
    }
}

#[test]
fn drift_sums_to_zero() {
    expect(drift_antisymmetry());
}

#[test]
fn drift_is_minus_energy_gradient() {
    expect(drift_gradient());
}

#[test]
fn normal_matrix_is_symmetric_psd() {
    expect(normal_matrix_symmetric_psd());
}

#[test]
fn normal_equations_ignore_particle_labels() {
    expect(permutation_invariance());
}

#[test]
fn estimation_is_bit_identical_across_thread_counts() {
    expect(thread_determinism());
}

#[test]
fn basis_is_orthonormal_under_observed_distances() {
    expect(gram_identity());
}

#[test]
fn rho_norm_is_homogeneous_with_known_value() {
    expect(rho_norm_values());
}

#[test]
fn opinion_normal_matrix_is_coercive() {
    expect(coercivity_positive());
}

#[test]
fn noiseless_data_recovers_basis_kernel() {
    for degree in [0, 1] {
        let err = exact_recovery(degree).unwrap();
        assert!(err < 1e-6, "degree {degree}: error {err}");
    }
}

#[test]
fn constant_kernel_drift_pulls_to_mean() {
    let x = [0.0, 1.0, 4.0, -2.0, 0.5, 3.0];
    let f = drift(&x, 3, 2, &InteractionKernel::constant(2.0));
    let mean = [(0.0 + 4.0 + 0.5) / 3.0, (1.0 - 2.0 + 3.0) / 3.0];
    for i in 0..3 {
        for k in 0..2 {
            let expected = 2.0 * (mean[k] - x[i * 2 + k]);
            assert!((f[i * 2 + k] - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn lennard_jones_continuation_is_c1() {
    let lj = LennardJones::new(8.0, 2.0, 1.0, 1.0, 0.95).unwrap();
    let rt = lj.r_trunc;
    let h = 1e-7;
    let left = lj.value(rt - h);
    let right = lj_phi(8.0, 2.0, 1.0, 1.0, rt);
    assert!((left - right).abs() < 1e-5 * right.abs());
    let slope_left = (lj.value(rt - h) - lj.value(rt - 2.0 * h)) / h;
    let slope_right = lj_phi_derivative(8.0, 2.0, 1.0, 1.0, rt);
    assert!((slope_left - slope_right).abs() < 1e-4 * slope_right.abs(), "{slope_left} vs {slope_right}");
    assert!(lj.a < 0.0 && lj.b > 0.0);
}

#[test]
fn fine_gaps_without_noise_stay_near_baseline() {
    let mut cfg = opinion(Scale::Desk);
    cfg.m_rho = 512;
    let fits = gap_study(&cfg, &[1, 2, 5, 10], &[0.0], 64, 2, 31).unwrap();
    let points = &fits[0].fit.points;
    let base = points[0].mean_error;
    for p in points {
        assert!((p.mean_error - base).abs() <= 0.1 * base, "dt {}: {} vs baseline {base}", p.x, p.mean_error);
    }
}

#[test]
fn opinion_autocorrelation_time_is_about_ten() {
    let params = opinion_params(0.1);
    let trajs = simulate_many(&params, &opinion_init(), 100.0, 0.01, 32, 0, 16).unwrap();
    let coarse: Vec<_> = trajs.iter().map(|t| subsample(t, 10).unwrap()).collect();
    let tau = autocorr_time(&coarse).unwrap();
    assert!(!tau.degenerate);
    assert!((5.0..=20.0).contains(&tau.tau), "tau = {}", tau.tau);
}
