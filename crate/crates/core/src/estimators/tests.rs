use super::*;
use crate::model::{AffineMatrix, ParamEntry, ParamRole};
use crate::simulate::{add_noise, decimate, simulate_inverse, Excitation, Mechanism, NoiseSpec};
use alloc::vec;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layout(d: usize) -> ParamLayout {
    ParamLayout {
        entries: (0..d).map(|i| ParamEntry::new(format!("p{i}"), ParamRole::Mass, "", i)).collect(),
    }
}

fn raw(rows: Vec<DMatrix<f64>>, taus: Vec<DVector<f64>>, metrics: Option<Vec<AffineMetric>>, reference: DVector<f64>) -> Regression {
    let velocities = taus.iter().map(|t| DVector::zeros(t.len())).collect();
    let rows = rows.into_iter().map(|y| RegressorRow { y }).collect();
    Regression::from_parts(layout(reference.len()), rows, taus, velocities, metrics, Vec::new(), reference).unwrap()
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Pan–tilt with gravity: two parameters, both identifiable.
fn pan_tilt(seconds: f64, tau_std: [f64; 2], seed: u64, max_samples: usize) -> (Mechanism, Regression) {
    let mech = Mechanism::pan_tilt(0.5, 0.3, true).unwrap();
    let exc = Excitation {
        duration: seconds,
        ..Excitation::default_for(&mech.structure, 21).unwrap()
    };
    let clean = simulate_inverse(&mech, &exc).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::tau_diagonal(&tau_std, seed), None).unwrap();
    let ds = decimate(&noisy, max_samples).unwrap();
    let reg = Regression::new(&mech.model(), &ds).unwrap();
    (mech, reg)
}

fn arm(seconds: f64, tau_std: f64, seed: u64, max_samples: usize) -> (Mechanism, Regression) {
    let mech = Mechanism::default_arm();
    let exc = Excitation {
        duration: seconds,
        ..Excitation::default_for(&mech.structure, 4).unwrap()
    };
    let clean = simulate_inverse(&mech, &exc).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::tau_diagonal(&[tau_std, tau_std], seed), None).unwrap();
    let ds = decimate(&noisy, max_samples).unwrap();
    let reg = Regression::new(&mech.model(), &ds).unwrap();
    (mech, reg)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn ols_single_sample_identity_regressor() {
    let reg = raw(vec![DMatrix::identity(2, 2)], vec![DVector::from_vec(vec![1.0, 2.0])], None, DVector::zeros(2));
    let rep = fit_ols(&reg, false).unwrap();
    assert_relative_eq!(rep.pi_hat.values, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-14);
    assert!(rep.solver.is_none());
    assert!(rep.warnings.is_empty());
}

#[test]
fn ols_recovers_noiseless_pan_tilt() {
    let (mech, reg) = pan_tilt(5.0, [0.0, 0.0], 0, 500);
    let rep = fit_ols(&reg, false).unwrap();
    assert!(rel(&rep.pi_hat.values, &mech.ground_truth.values) <= 1e-8);
}

/// Least squares through modified Gram–Schmidt and back substitution.
fn mgs_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    let mut q = a.clone();
    let mut r = DMatrix::zeros(n, n);
    for k in 0..n {
        r[(k, k)] = q.column(k).norm();
        let qk = q.column(k) / r[(k, k)];
        q.set_column(k, &qk);
        for j in k + 1..n {
            r[(k, j)] = qk.dot(&q.column(j));
            let v = q.column(j) - &qk * r[(k, j)];
            q.set_column(j, &v);
        }
    }
    let qtb = q.transpose() * b;
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = qtb[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    assert_eq!(m, b.len());
    x
}

#[test]
fn ols_matches_gram_schmidt_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let rows: Vec<DMatrix<f64>> = (0..12).map(|_| random_matrix(&mut rng, 3, 5)).collect();
        let taus: Vec<DVector<f64>> = (0..12).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0))).collect();
        let reg = raw(rows, taus, None, DVector::zeros(5));
        let (a, b) = reg.stacked();
        let want = mgs_lstsq(&a, &b);
        let got = fit_ols(&reg, false).unwrap().pi_hat.values;
        assert!(rel(&got, &want) <= 1e-10, "{}", rel(&got, &want));
    }
}

#[test]
fn ols_rank_deficient_returns_minimum_norm_with_warning() {
    let y = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let reg = raw(vec![y], vec![DVector::from_vec(vec![2.0])], None, DVector::zeros(2));
    let rep = fit_ols(&reg, false).unwrap();
    assert_relative_eq!(rep.pi_hat.values, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
    assert_eq!(rep.rank, 1);
    assert_eq!(rep.flat_directions, 1);
    assert!(!rep.warnings.is_empty());
}

#[test]
fn wls_with_identity_weight_is_ols() {
    let (_, reg) = pan_tilt(4.0, [0.05, 0.02], 3, 200);
    let ols = fit_ols(&reg, false).unwrap();
    let wls = fit_wls(&reg, &WeightPolicy::Fixed(DMatrix::identity(2, 2)), false).unwrap();
    assert_eq!(ols.pi_hat.values, wls.pi_hat.values);
    assert_eq!(ols.objective, wls.objective);
}

#[test]
fn wls_tracks_the_heavily_weighted_coordinate() {
    // One parameter seen by both coordinates with conflicting targets.
    let y = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
    let reg = raw(vec![y], vec![DVector::from_vec(vec![1.0, 2.0])], None, DVector::zeros(1));
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1e6, 1.0]));
    let wls = fit_wls(&reg, &WeightPolicy::Fixed(w), false).unwrap();
    assert!((wls.pi_hat.values[0] - 1.0).abs() < 2e-6);
    assert_relative_eq!(fit_ols(&reg, false).unwrap().pi_hat.values[0], 1.5, epsilon = 1e-14);
}

#[test]
fn wls_rejects_indefinite_weight() {
    let (_, reg) = pan_tilt(1.0, [0.0, 0.0], 0, 50);
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
    assert!(fit_wls(&reg, &WeightPolicy::Fixed(w), false).is_err());
}

#[test]
fn auto_wls_beats_ols_on_anisotropic_noise() {
    let mut mse_ols = 0.0;
    let mut mse_wls = 0.0;
    for seed in 0..50 {
        let (mech, reg) = pan_tilt(6.0, [0.005, 0.2], seed, 150);
        let truth = &mech.ground_truth.values;
        mse_ols += (fit_ols(&reg, false).unwrap().pi_hat.values - truth).norm_squared();
        let wls = fit_wls(&reg, &WeightPolicy::Auto, false).unwrap();
        let sigma = wls.sigma_hat.as_ref().unwrap();
        assert!(sigma[(1, 1)] > 100.0 * sigma[(0, 0)]);
        mse_wls += (wls.pi_hat.values - truth).norm_squared();
    }
    assert!(mse_wls <= mse_ols, "wls {mse_wls} ols {mse_ols}");
}

#[test]
fn energy_without_motion_identifies_nothing() {
    let rows = vec![DMatrix::identity(2, 2); 3];
    let taus = vec![DVector::from_vec(vec![1.0, -1.0]); 3];
    let reg = raw(rows, taus, None, DVector::zeros(2));
    let rep = fit_energy(&reg, false).unwrap();
    assert_eq!(rep.rank, 0);
    assert_eq!(rep.objective, 0.0);
    assert!(rep.warnings.iter().any(|w| w.contains("velocities")));
}

#[test]
fn energy_on_scalar_systems_is_velocity_weighted_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = Vec::new();
    let mut taus = Vec::new();
    let mut vels = Vec::new();
    let mut scaled_rows = Vec::new();
    let mut scaled_taus = Vec::new();
    for _ in 0..15 {
        let y = random_matrix(&mut rng, 1, 3);
        let t = DVector::from_element(1, rng.random_range(-1.0..1.0));
        let v = DVector::from_element(1, rng.random_range(-2.0..2.0));
        scaled_rows.push(&y * v[0]);
        scaled_taus.push(&t * v[0]);
        rows.push(RegressorRow { y });
        taus.push(t);
        vels.push(v);
    }
    let reg = Regression::from_parts(layout(3), rows, taus, vels, None, Vec::new(), DVector::zeros(3)).unwrap();
    let oracle = raw(scaled_rows, scaled_taus, None, DVector::zeros(3));
    let a = fit_energy(&reg, false).unwrap().pi_hat.values;
    let b = fit_ols(&oracle, false).unwrap().pi_hat.values;
    assert!(rel(&a, &b) <= 1e-12);
}

fn svd_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

#[test]
fn energy_rank_matches_svd_oracle() {
    let (_, full) = pan_tilt(5.0, [0.0, 0.0], 0, 200);
    // Pan-only motion at level tilt: power never sees gravity.
    let mech = Mechanism::pan_tilt(0.5, 0.3, true).unwrap();
    let exc = Excitation {
        offsets: vec![0.0, 0.0],
        coordinates: vec![
            vec![crate::simulate::Sinusoid { amplitude: 0.8, frequency: 0.31, phase: 0.0 }],
            vec![crate::simulate::Sinusoid { amplitude: 0.0, frequency: 0.47, phase: 0.0 }],
        ],
        duration: 5.0,
        rate: 20.0,
    };
    let flat = Regression::new(&mech.model(), &simulate_inverse(&mech, &exc).unwrap()).unwrap();
    for (reg, expected) in [(full, 2), (flat, 1)] {
        let sys = energy_system(&reg);
        let rep = fit_energy(&reg, false).unwrap();
        assert_eq!(rep.rank, svd_rank(&sys.a));
        assert_eq!(rep.rank, expected);
    }
}

fn constant_identity_metric(n: usize, d: usize) -> AffineMetric {
    AffineMatrix::new(DMatrix::identity(n, n), vec![DMatrix::zeros(n, n); d]).unwrap()
}

#[test]
fn dual_metric_with_constant_identity_metric_is_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<DMatrix<f64>> = (0..10).map(|_| random_matrix(&mut rng, 2, 3)).collect();
    let taus: Vec<DVector<f64>> = (0..10).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
    let metrics = Some(vec![constant_identity_metric(2, 3); 10]);
    let reg = raw(rows, taus, metrics, DVector::zeros(3));
    let dm = fit_dual_metric(&reg, false).unwrap();
    let ols = fit_ols(&reg, false).unwrap();
    assert!(rel(&dm.pi_hat.values, &ols.pi_hat.values) <= 1e-9);
    assert_relative_eq!(dm.objective, ols.objective, max_relative = 1e-9);
}

#[test]
fn dual_metric_recovers_noiseless_pan_tilt() {
    let (mech, reg) = pan_tilt(5.0, [0.0, 0.0], 0, 120);
    let rep = fit_dual_metric(&reg, false).unwrap();
    assert!(rep.is_optimal());
    assert!(rel(&rep.pi_hat.values, &mech.ground_truth.values) <= 1e-6);
}

#[test]
fn dual_metric_one_parameter_drag_matches_grid_search() {
    // M(π) = π A and Y = A q̇, so f(π) = π Σ q̇ᵀAq̇ − 2 Σ q̇ᵀτ + Σ τᵀA⁻¹τ / π.
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
    let ainv = a.clone().try_inverse().unwrap();
    let qd = [[0.4, -1.0], [1.2, 0.3], [-0.5, 0.8]];
    let tau = [[0.9, -0.2], [3.1, 0.4], [-0.7, 0.1]];
    let mut rows = Vec::new();
    let mut taus = Vec::new();
    let mut metrics = Vec::new();
    let (mut s_a, mut s_c) = (0.0, 0.0);
    let mut s_b = 0.0;
    for i in 0..3 {
        let v = DVector::from_row_slice(&qd[i]);
        let t = DVector::from_row_slice(&tau[i]);
        rows.push(RegressorRow { y: DMatrix::from_column_slice(2, 1, (&a * &v).as_slice()) });
        s_a += v.dot(&(&a * &v));
        s_b += v.dot(&t);
        s_c += t.dot(&(&ainv * &t));
        taus.push(t);
        metrics.push(AffineMatrix::new(DMatrix::zeros(2, 2), vec![a.clone()]).unwrap());
    }
    let vels = qd.iter().map(|v| DVector::from_row_slice(v)).collect();
    let reg = Regression::from_parts(layout(1), rows, taus, vels, Some(metrics), Vec::new(), DVector::from_element(1, 1.0)).unwrap();
    let f = |p: f64| p * s_a - 2.0 * s_b + s_c / p;
    let mut best = (f64::INFINITY, 0.0);
    let mut p = 1e-4;
    while p < 10.0 {
        let v = f(p);
        if v < best.0 {
            best = (v, p);
        }
        p += 1e-4;
    }
    let rep = fit_dual_metric(&reg, false).unwrap();
    assert!((rep.pi_hat.values[0] - best.1).abs() <= 1e-3, "{} vs {}", rep.pi_hat.values[0], best.1);
    assert!((rep.objective - best.0).abs() <= 1e-6 * best.0.abs().max(1.0));
}

#[test]
fn dual_metric_slacks_are_tight() {
    let (_, reg) = pan_tilt(5.0, [0.02, 0.05], 8, 100);
    let rep = fit_dual_metric(&reg, true).unwrap();
    assert!(rep.schur_tightness.unwrap() <= 1e-6, "{:?}", rep.schur_tightness);
}

fn charts() -> Vec<DMatrix<f64>> {
    let mut out = vec![
        DMatrix::from_diagonal(&DVector::from_vec(vec![1000.0, 1.0])),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..3 {
        let m = random_matrix(&mut rng, 2, 2) + DMatrix::identity(2, 2) * 1.5;
        out.push(m);
    }
    out
}

#[test]
fn dual_metric_is_chart_invariant_and_ols_is_not() {
    // Low-data arm with 1:10 anisotropic force noise.
    let (_, reg) = arm_aniso(35.0, [0.1, 1.0], 1, 20);
    let dm = fit_dual_metric(&reg, false).unwrap();
    let ols = fit_ols(&reg, false).unwrap();
    for d in charts() {
        let moved = reg.transform(&d).unwrap();
        let dm2 = fit_dual_metric(&moved, false).unwrap();
        assert!(rel(&dm2.pi_hat.values, &dm.pi_hat.values) <= 1e-6, "{}", rel(&dm2.pi_hat.values, &dm.pi_hat.values));
        assert!((dm2.objective - dm.objective).abs() <= 1e-8 * dm.objective);
    }
    let big = reg.transform(&charts()[0]).unwrap();
    let ols2 = fit_ols(&big, false).unwrap();
    assert!(rel(&ols2.pi_hat.values, &ols.pi_hat.values) > 1e-2);
}

#[test]
fn per_sample_dual_residuals_are_chart_invariant() {
    let (_, reg) = pan_tilt(3.0, [0.05, 0.05], 2, 60);
    let pi = DVector::from_vec(vec![0.05, 0.2]);
    let metrics = reg.metrics.as_ref().unwrap();
    for d in charts() {
        let moved = reg.transform(&d).unwrap();
        let mm = moved.metrics.as_ref().unwrap();
        for i in 0..reg.len() {
            let a = dual_norm_sq(&metrics[i].assemble(&pi), &reg.rows[i].residual(&pi, &reg.taus[i])).unwrap();
            let b = dual_norm_sq(&mm[i].assemble(&pi), &moved.rows[i].residual(&pi, &moved.taus[i])).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        }
    }
}

/// Orthogonal projector onto the row space of the stacked regressor.
fn row_projector(reg: &Regression) -> DMatrix<f64> {
    let (a, _) = reg.stacked();
    let (row, _) = crate::linalg::row_and_null_space(&a, 1e-10);
    &row * row.transpose()
}

#[test]
fn identifiable_part_agrees_across_estimators_on_arm() {
    let (mech, reg) = arm(6.0, 0.0, 0, 150);
    assert!(reg.rank < reg.num_params());
    // The first link's mass never enters the dynamics.
    let (a, _) = reg.stacked();
    let m1 = reg.layout.entries.iter().position(|e| e.role == ParamRole::Mass).unwrap();
    assert!(a.column(m1).amax() == 0.0);
    let p = row_projector(&reg);
    let ols = fit_ols(&reg, false).unwrap().pi_hat.values;
    let dm = fit_dual_metric(&reg, false).unwrap().pi_hat.values;
    assert!((&p * (&dm - &ols)).norm() <= 1e-6 * ols.norm());
    assert!((&p * (&dm - &mech.ground_truth.values)).norm() <= 1e-6 * ols.norm());
}

fn assert_feasible(reg: &Regression, pi: &DVector<f64>, tol: f64) {
    for c in &reg.constraints {
        assert!(c.min_eigenvalue(pi) >= c.margin - tol, "{} at {}", c.label, c.min_eigenvalue(pi));
    }
}

#[test]
fn every_estimator_is_feasible_when_constrained() {
    let (mech, reg) = arm(6.0, 0.3, 4, 80);
    for kind in EstimatorKind::ALL {
        let spec = EstimatorSpec::new(kind).constrained(true).with_nominal(mech.ground_truth.clone());
        let rep = fit(&reg, &spec).unwrap();
        assert_feasible(&reg, &rep.pi_hat.values, 1e-8);
        assert!(rep.is_optimal(), "{} {:?}", kind.name(), rep.solver);
    }
}

#[test]
fn constrained_fit_on_crawler_is_feasible() {
    let mech = Mechanism::default_crawler();
    let exc = Excitation {
        duration: 6.0,
        ..Excitation::default_for(&mech.structure, 2).unwrap()
    };
    let clean = simulate_inverse(&mech, &exc).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::tau_diagonal(&[0.3; 5], 1), None).unwrap();
    let reg = Regression::new(&mech.model(), &decimate(&noisy, 40).unwrap()).unwrap();
    for kind in [EstimatorKind::Ols, EstimatorKind::DualMetric] {
        let rep = fit(&reg, &EstimatorSpec::new(kind).constrained(true)).unwrap();
        assert_feasible(&reg, &rep.pi_hat.values, 1e-8);
    }
}

#[test]
fn pulling_toward_negative_mass_lands_on_the_boundary() {
    let (_, mut reg) = pan_tilt(4.0, [0.0, 0.0], 0, 80);
    for t in &mut reg.taus {
        *t = -&*t;
    }
    let ols = fit_ols(&reg, false).unwrap();
    assert!(ols.pi_hat.values[0] < 0.0);
    let con = fit_ols(&reg, true).unwrap();
    assert_feasible(&reg, &con.pi_hat.values, 1e-8);
    let lowest = reg.constraints.iter().map(|c| c.min_eigenvalue(&con.pi_hat.values) - c.margin).fold(f64::INFINITY, f64::min);
    assert!(lowest <= 1e-4);
}

#[test]
fn tiny_rho_reproduces_wls() {
    let (mech, reg) = pan_tilt(5.0, [0.01, 0.05], 6, 100);
    let wls = fit_wls(&reg, &WeightPolicy::Auto, false).unwrap();
    for kind in [EstimatorKind::RegBregman, EstimatorKind::RegPullback] {
        let rep = fit_regularized(&reg, kind, Some(1e-12), &mech.ground_truth, false).unwrap();
        assert!(rel(&rep.pi_hat.values, &wls.pi_hat.values) <= 1e-6, "{}", kind.name());
    }
}

#[test]
fn pullback_without_data_returns_the_nominal() {
    let (mech, reg) = pan_tilt(1.0, [0.0, 0.0], 0, 20);
    let empty = Regression::from_parts(reg.layout.clone(), Vec::new(), Vec::new(), Vec::new(), None, reg.constraints.clone(), reg.reference.clone()).unwrap();
    let rep = fit_regularized(&empty, EstimatorKind::RegPullback, Some(1.0), &mech.ground_truth, false).unwrap();
    assert!(rel(&rep.pi_hat.values, &mech.ground_truth.values) <= 1e-12);
}

#[test]
fn pullback_on_two_parameters_matches_normal_equations() {
    let (_, reg) = pan_tilt(5.0, [0.02, 0.05], 9, 100);
    let nominal = DynamicParams::new(DVector::from_vec(vec![0.06, 0.12]), reg.layout.clone()).unwrap();
    let rho = 3.0;
    let rep = fit_regularized(&reg, EstimatorKind::RegPullback, Some(rho), &nominal, false).unwrap();
    let w = rep.weight.as_ref().unwrap();
    let h = pullback_hessian(&parameter_blocks(&reg), &nominal.values).unwrap();
    let mut lhs = &h * rho;
    let mut rhs = &h * &nominal.values * rho;
    for (row, tau) in reg.rows.iter().zip(&reg.taus) {
        lhs += row.y.transpose() * w * &row.y;
        rhs += row.y.transpose() * w * tau;
    }
    let want = lhs.lu().solve(&rhs).unwrap();
    assert!(rel(&rep.pi_hat.values, &want) <= 1e-9, "{}", rel(&rep.pi_hat.values, &want));
}

#[test]
fn pullback_hessian_matches_affine_invariant_metric() {
    // Second-order expansion of the affine-invariant distance gives
    // G_pq = tr(P₀⁻¹ P_p P₀⁻¹ P_q).
    let (mech, reg) = arm(2.0, 0.0, 0, 40);
    let blocks = parameter_blocks(&reg);
    let pi0 = &mech.ground_truth.values;
    let h = pullback_hessian(&blocks, pi0).unwrap();
    let d = pi0.len();
    let mut g = DMatrix::zeros(d, d);
    for c in &blocks {
        let p0inv = c.evaluate(pi0).try_inverse().unwrap();
        for p in 0..d {
            for q in 0..d {
                g[(p, q)] += (&p0inv * &c.form.coeffs[p] * &p0inv * &c.form.coeffs[q]).trace();
            }
        }
    }
    assert!((&h - &g).norm() <= 1e-5 * g.norm(), "{}", (&h - &g).norm() / g.norm());
}

#[test]
fn pullback_regularizer_shrinks_as_rho_grows() {
    let (_, reg) = arm(4.0, 0.5, 3, 60);
    let nominal = DynamicParams::new(reg.reference.clone(), reg.layout.clone()).unwrap();
    let mut last = f64::INFINITY;
    for k in -4..=3 {
        let rho = 10f64.powi(k);
        let rep = fit_regularized(&reg, EstimatorKind::RegPullback, Some(rho), &nominal, false).unwrap();
        let g = regularizer_value(&reg, EstimatorKind::RegPullback, &nominal.values, &rep.pi_hat.values).unwrap().unwrap();
        assert!(g <= last * (1.0 + 1e-9) + 1e-15, "rho {rho}: {g} > {last}");
        last = g;
    }
}

#[test]
fn bregman_regularizer_is_zero_at_nominal_and_positive_elsewhere() {
    let (mech, reg) = arm(2.0, 0.0, 0, 40);
    let pi0 = &mech.ground_truth.values;
    let at = regularizer_value(&reg, EstimatorKind::RegBregman, pi0, pi0).unwrap().unwrap();
    assert!(at.abs() <= 1e-12);
    let other = regularizer_value(&reg, EstimatorKind::RegBregman, pi0, &reg.reference).unwrap().unwrap();
    assert!(other > 0.0);
}

#[test]
fn default_rho_is_positive_and_reported() {
    let (mech, reg) = pan_tilt(4.0, [0.02, 0.05], 2, 80);
    for kind in [EstimatorKind::RegBregman, EstimatorKind::RegPullback] {
        let rep = fit(&reg, &EstimatorSpec::new(kind).with_nominal(mech.ground_truth.clone())).unwrap();
        assert!(rep.rho.unwrap() > 0.0);
    }
}

#[test]
fn regularized_spec_validation() {
    let (mech, reg) = pan_tilt(1.0, [0.0, 0.0], 0, 20);
    assert!(fit(&reg, &EstimatorSpec::new(EstimatorKind::RegBregman)).is_err());
    let spec = EstimatorSpec::new(EstimatorKind::RegPullback).with_nominal(mech.ground_truth.clone()).with_rho(0.0);
    assert!(fit(&reg, &spec).is_err());
    let bad = DynamicParams::new(DVector::from_vec(vec![-0.1, 0.1]), reg.layout.clone()).unwrap();
    assert!(fit_regularized(&reg, EstimatorKind::RegBregman, Some(1.0), &bad, false).is_err());
    assert!(fit_regularized(&reg, EstimatorKind::Ols, Some(1.0), &mech.ground_truth, false).is_err());
}

#[test]
fn estimator_names_round_trip() {
    for k in EstimatorKind::ALL {
        assert_eq!(EstimatorKind::parse(k.name()), Some(k));
    }
    assert_eq!(EstimatorKind::parse("ridge"), None);
}

#[test]
fn singular_samples_are_excluded_identically_in_every_chart() {
    let mech = Mechanism::default_pan_tilt();
    let model = mech.model();
    let s = |t: f64, phi: f64| crate::model::Sample {
        t,
        q: DVector::from_vec(vec![0.0, phi]),
        qd: DVector::from_vec(vec![0.1, 0.2]),
        qdd: Some(DVector::from_vec(vec![0.3, -0.1])),
        tau: DVector::from_vec(vec![0.0, 0.0]),
    };
    let ds = Dataset::new(
        vec![s(0.0, 0.1), s(1.0, core::f64::consts::FRAC_PI_2), s(2.0, 0.3)],
        1.0,
        "physical",
        vec!["pan".into(), "tilt".into()],
        vec!["rad".into(), "rad".into()],
    )
    .unwrap();
    let reg = Regression::new(&model, &ds).unwrap();
    assert_eq!(reg.excluded, vec![1]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-3, 1.0]));
    let moved = Regression::new(&model.rechart(&d).unwrap(), &crate::simulate::rescale_chart(&ds, &d).unwrap()).unwrap();
    assert_eq!(moved.excluded, vec![1]);
}

fn arm_aniso(seconds: f64, tau_std: [f64; 2], seed: u64, max_samples: usize) -> (Mechanism, Regression) {
    let mech = Mechanism::default_arm();
    let exc = Excitation {
        duration: seconds,
        ..Excitation::default_for(&mech.structure, 4).unwrap()
    };
    let clean = simulate_inverse(&mech, &exc).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::tau_diagonal(&tau_std, seed), None).unwrap();
    let ds = decimate(&noisy, max_samples).unwrap();
    let reg = Regression::new(&mech.model(), &ds).unwrap();
    (mech, reg)
}

#[test]
fn constrained_auto_wls_survives_noiseless_data() {
    // The residual covariance is roundoff-sized, so the weight is enormous.
    let (mech, reg) = arm(10.0, 0.0, 0, 200);
    let report = fit_wls(&reg, &WeightPolicy::Auto, true).unwrap();
    assert!(report.is_optimal(), "{:?}", report.solver);
    let p = crate::evaluate::identifiable_projection(&reg);
    assert!(rel(&(&p * &report.pi_hat.values), &(&p * &mech.ground_truth.values)) < 1e-6);
}
