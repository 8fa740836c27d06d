use ipsk_core::estimator::{assemble, post_process, solve, NormalSystem, DEFAULT_GRID_POINTS, DEFAULT_RCOND};
use ipsk_core::eval::{coercivity_estimate, kernel_error};
use ipsk_core::hypospace::{build_basis_on_samples, HypothesisBasis, PartitionMode};
use ipsk_core::measure::{empirical_rho, rho_norm, EmpiricalMeasure};
use ipsk_core::model::{InitialDistribution, InteractionKernel, SystemParams};
use ipsk_core::sim::{drift, simulate_many, Trajectory};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one check: a short description of what was measured.
pub type Check = Result<String, String>;

pub fn lj() -> InteractionKernel {
    InteractionKernel::lennard_jones(8.0, 2.0, 1.0, 1.0, 0.95, 10.0).unwrap()
}

pub fn opinion_params(sigma: f64) -> SystemParams {
    SystemParams::new(10, 1, sigma, InteractionKernel::opinion()).unwrap()
}

pub fn opinion_init() -> InitialDistribution {
    InitialDistribution::UniformBox { lo: 0.0, hi: 8.0 }
}

pub fn opinion_data(m: usize, seed: u64) -> Vec<Trajectory> {
    simulate_many(&opinion_params(0.1), &opinion_init(), 5.0, 0.01, seed, 0, m).unwrap()
}

pub fn sample_basis(trajs: &[Trajectory], cells: usize, degree: usize, mode: PartitionMode) -> HypothesisBasis {
    let rho = empirical_rho(trajs, 1000).unwrap();
    build_basis_on_samples(trajs, &rho, cells, degree, mode).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, d: usize, width: f64) -> Vec<f64> {
    (0..n * d).map(|_| rng.random_range(0.0..width)).collect()
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn drift_antisymmetry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for (kernel, d, width) in [(InteractionKernel::opinion(), 1, 3.0), (lj(), 2, 3.0), (lj(), 3, 2.0)] {
        for _ in 0..50 {
            let n = rng.random_range(2..12);
            let x = random_state(&mut rng, n, d, width);
            let f = drift(&x, n, d, &kernel);
            for k in 0..d {
                worst = worst.max((0..n).map(|i| f[i * d + k]).sum::<f64>().abs());
            }
        }
    }
    let msg = format!("max |sum_i f_i| = {worst:.2e}");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, (a, fa): (f64, f64), (m, fm): (f64, f64), (b, fb): (f64, f64), tol: f64, depth: u32) -> f64 {
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, (a, fa), (lm, flm), (m, fm), tol / 2.0, depth - 1) + rec(f, (m, fm), (rm, frm), (b, fb), tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    rec(f, (a, f(a)), (m, f(m)), (b, f(b)), tol, 40)
}

/// `V(x) = (1/2N) sum_{i != j} Phi(|x_i - x_j|)` with `Phi(r) = int_0^r phi(s) s ds`.
fn energy(x: &[f64], n: usize, d: usize, kernel: &InteractionKernel) -> f64 {
    let integrand = |s: f64| kernel.value(s) * s;
    let mut v = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum::<f64>().sqrt();
            v += simpson(&integrand, 0.0, r, 1e-14);
        }
    }
    v / n as f64
}

pub fn drift_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (kernel, d, width) in [(InteractionKernel::opinion(), 1, 2.0), (lj(), 2, 2.5)] {
        for _ in 0..5 {
            let n = 5;
            let x = random_state(&mut rng, n, d, width);
            let f = drift(&x, n, d, &kernel);
            for c in 0..n * d {
                let (mut up, mut dn) = (x.clone(), x.clone());
                up[c] += h;
                dn[c] -= h;
                let grad = (energy(&up, n, d, &kernel) - energy(&dn, n, d, &kernel)) / (2.0 * h);
                worst = worst.max((f[c] + grad).abs());
            }
        }
    }
    let msg = format!("max |f + grad V| = {worst:.2e}");
    if worst <= 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn min_eigenvalue(sys: &NormalSystem) -> f64 {
    let n = sys.dim();
    let a = DMatrix::from_row_slice(n, n, sys.matrix());
    let sym = (&a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn normal_matrix_symmetric_psd() -> Check {
    let trajs = opinion_data(32, 21);
    let mut report = Vec::new();
    for degree in [0, 1] {
        let basis = sample_basis(&trajs, 12, degree, PartitionMode::Uniform);
        let sys = assemble(&trajs, &basis).unwrap();
        let scale = max_abs(sys.matrix());
        let n = sys.dim();
        let asym =
            (0..n).flat_map(|p| (0..n).map(move |q| (p, q))).map(|(p, q)| (sys.entry(p, q) - sys.entry(q, p)).abs()).fold(0.0, f64::max);
        let lmin = min_eigenvalue(&sys);
        report.push(format!("degree {degree}: asym {asym:.1e}, lambda_min {lmin:.2e}"));
        if asym > 1e-14 * scale || lmin < -1e-12 * scale {
            return Err(report.join("; "));
        }
    }
    Ok(report.join("; "))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = max_abs(a).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn permutation_invariance() -> Check {
    let trajs = opinion_data(8, 22);
    let basis = sample_basis(&trajs, 10, 1, PartitionMode::Uniform);
    let sys = assemble(&trajs, &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let mut perm: Vec<usize> = (0..10).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let moved: Vec<Trajectory> = trajs.iter().map(|t| t.relabel(&perm)).collect();
        let other = assemble(&moved, &basis).unwrap();
        worst = worst.max(rel_diff(sys.matrix(), other.matrix())).max(rel_diff(sys.rhs(), other.rhs()));
    }
    let msg = format!("max relative change {worst:.1e}");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

pub fn thread_determinism() -> Check {
    let trajs = opinion_data(40, 24);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let basis = sample_basis(&trajs, 10, 1, PartitionMode::RhoAdaptive);
            let sys = assemble(&trajs, &basis).unwrap();
            let sol = solve(&sys, DEFAULT_RCOND).unwrap();
            (sys.matrix().to_vec(), sys.rhs().to_vec(), sol.coefficients)
        })
    };
    let first = run(1);
    for threads in [2, 4, 8] {
        let other = run(threads);
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !(same(&first.0, &other.0) && same(&first.1, &other.1) && same(&first.2, &other.2)) {
            return Err(format!("{threads} threads differ from 1 thread"));
        }
    }
    Ok("bit-identical on 1, 2, 4 and 8 threads".into())
}

/// Gram matrix of the basis under the observed distances, computed directly.
fn sample_gram(trajs: &[Trajectory], basis: &HypothesisBasis) -> Vec<f64> {
    let n = basis.len();
    let (lo, hi) = basis.support();
    let mut gram = vec![0.0; n * n];
    let mut count = 0usize;
    let mut values = vec![0.0; n];
    for t in trajs {
        let (np, d) = (t.n(), t.d());
        for l in 0..t.steps() {
            let x = t.state(l);
            for i in 0..np {
                for j in i + 1..np {
                    count += 1;
                    let r = (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum::<f64>().sqrt();
                    if r < lo || r > hi {
                        continue;
                    }
                    for (p, v) in values.iter_mut().enumerate() {
                        *v = basis.eval(p, r).unwrap();
                    }
                    for p in 0..n {
                        if values[p] == 0.0 {
                            continue;
                        }
                        for q in 0..n {
                            gram[p * n + q] += values[p] * values[q] * r * r;
                        }
                    }
                }
            }
        }
    }
    gram.iter_mut().for_each(|g| *g /= count as f64);
    gram
}

pub fn gram_identity() -> Check {
    let trajs = opinion_data(8, 25);
    let mut worst = 0.0f64;
    for (degree, mode) in [(0, PartitionMode::Uniform), (1, PartitionMode::Uniform), (2, PartitionMode::RhoAdaptive)] {
        let basis = sample_basis(&trajs, 8, degree, mode);
        let gram = sample_gram(&trajs, &basis);
        let n = basis.len();
        for p in (0..n).filter(|&p| basis.is_active(p)) {
            for q in (0..n).filter(|&q| basis.is_active(q)) {
                let target = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((gram[p * n + q] - target).abs());
            }
        }
    }
    let msg = format!("max |G - I| = {worst:.1e}");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

pub fn rho_norm_values() -> Check {
    let uniform = EmpiricalMeasure::from_counts(0.0, 1.0, &vec![1; 1000]).unwrap();
    let value = rho_norm(|r| r, &uniform);
    let exact = (1.0f64 / 5.0).sqrt();
    if (value - exact).abs() > 1e-3 {
        return Err(format!("|||r||| = {value} vs {exact}"));
    }
    let f = |r: f64| (3.0 * r).sin() + 0.5;
    let base = rho_norm(f, &uniform);
    for c in [-2.5, 0.0, 0.3, 7.0] {
        let scaled = rho_norm(|r| c * f(r), &uniform);
        if (scaled - c.abs() * base).abs() > 1e-12 * base.max(1.0) * c.abs().max(1.0) {
            return Err(format!("homogeneity fails for c = {c}: {scaled} vs {}", c.abs() * base));
        }
    }
    Ok(format!("|||r||| = {value:.6} vs sqrt(1/5) = {exact:.6}, homogeneous"))
}

pub fn coercivity_positive() -> Check {
    let trajs = opinion_data(256, 26);
    let basis = sample_basis(&trajs, 16, 0, PartitionMode::Uniform);
    let sys = assemble(&trajs, &basis).unwrap();
    let lmin = coercivity_estimate(&sys);
    let msg = format!("lambda_min = {lmin:.3e} at M = 256");
    if lmin > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Noiseless data generated with a basis function as the kernel; returns the
/// error of the estimate against that kernel.
pub fn exact_recovery(degree: usize) -> std::result::Result<f64, String> {
    let seed_data = opinion_data(16, 27);
    let basis = sample_basis(&seed_data, 12, degree, PartitionMode::Uniform);
    let p = (basis.len() / 2..basis.len()).find(|&p| basis.is_active(p)).ok_or("no active basis function")?;
    let mut truth = vec![0.0; basis.len()];
    truth[p] = 1.0;
    let phi = post_process(&truth, &basis, DEFAULT_GRID_POINTS).map_err(|e| e.to_string())?.raw().clone();
    let params = SystemParams::new(10, 1, 0.0, phi.clone()).unwrap();
    let trajs = simulate_many(&params, &opinion_init(), 5.0, 0.01, 28, 0, 16).map_err(|e| e.to_string())?;
    let sys = assemble(&trajs, &basis).map_err(|e| e.to_string())?;
    let sol = solve(&sys, DEFAULT_RCOND).map_err(|e| e.to_string())?;
    let est = post_process(&sol.coefficients, &basis, DEFAULT_GRID_POINTS).map_err(|e| e.to_string())?;
    let rho = empirical_rho(&trajs, 1000).map_err(|e| e.to_string())?;
    let norm = rho_norm(|r| phi.value(r), &rho);
    if norm <= 0.0 {
        return Err("kernel has no mass under the data".into());
    }
    Ok(kernel_error(&est, &phi, &rho))
}

pub fn all_properties() -> Vec<(&'static str, Check)> {
    vec![
        ("drift antisymmetry", drift_antisymmetry()),
        ("drift gradient", drift_gradient()),
        ("normal matrix symmetric PSD", normal_matrix_symmetric_psd()),
        ("permutation invariance", permutation_invariance()),
        ("thread determinism", thread_determinism()),
        ("basis Gram identity", gram_identity()),
        ("rho norm", rho_norm_values()),
        ("coercivity", coercivity_positive()),
    ]
}
