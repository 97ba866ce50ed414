use super::*;
use crate::testutil::lagrange_oracle;
use approx::assert_relative_eq;
use proptest::prelude::*;

fn single(amplitude: f64, frequency: f64, phase: f64) -> Vec<Sinusoid> {
    vec![Sinusoid {
        amplitude,
        frequency,
        phase,
    }]
}

fn short(exc: Excitation, duration: f64) -> Excitation {
    Excitation { duration, ..exc }
}

#[test]
fn validator_rejects_octave_and_accepts_irrational_looking_set() {
    assert!(check_non_harmonic(&[1.0, 2.0]).is_err());
    assert!(check_non_harmonic(&[1.0, 1.318, 1.729]).is_ok());
    // 3:2 within tolerance.
    assert!(check_non_harmonic(&[0.2, 0.30002]).is_err());
    assert!(check_non_harmonic(&[0.0, 0.3]).is_err());
}

#[test]
fn generated_frequencies_are_non_harmonic_and_seeded() {
    let a = non_harmonic_frequencies(15, 0.1, 0.6, 7).unwrap();
    let b = non_harmonic_frequencies(15, 0.1, 0.6, 7).unwrap();
    assert_eq!(a, b);
    check_non_harmonic(&a).unwrap();
    assert!(a.iter().all(|f| (0.1..=0.6).contains(f)));
}

#[test]
fn default_excitations_validate_for_every_structure() {
    for mech in [Mechanism::default_pan_tilt(), Mechanism::default_arm(), Mechanism::default_crawler()] {
        let exc = Excitation::default_for(&mech.structure, 3).unwrap();
        exc.validate().unwrap();
        assert_eq!(exc.sample_count(), 3500);
        let other = exc.with_phases(4);
        assert_eq!(exc.frequencies(), other.frequencies());
        assert_ne!(exc.coordinates[0][0].phase, other.coordinates[0][0].phase);
    }
}

#[test]
fn zero_excitation_without_gravity_gives_zero_force() {
    let mech = Mechanism::default_pan_tilt();
    let exc = Excitation {
        offsets: vec![0.3, 0.2],
        coordinates: vec![single(0.0, 0.31, 0.0), single(0.0, 0.47, 0.0)],
        duration: 2.0,
        rate: 50.0,
    };
    let ds = simulate_inverse(&mech, &exc).unwrap();
    assert!(ds.samples.iter().all(|s| s.tau.iter().all(|v| *v == 0.0)));
}

#[test]
fn pan_axis_decouples_at_level_tilt() {
    let (m, l) = (0.5, 0.3);
    let mech = Mechanism::pan_tilt(m, l, false).unwrap();
    let exc = Excitation {
        offsets: vec![0.0, 0.0],
        coordinates: vec![single(1.0, 1.0 / (2.0 * PI), 0.0), single(0.0, 0.9, 0.0)],
        duration: 5.0,
        rate: 20.0,
    };
    let ds = simulate_inverse(&mech, &exc).unwrap();
    for s in &ds.samples {
        assert_relative_eq!(s.qdd.as_ref().unwrap()[0], -s.t.sin(), epsilon = 1e-12);
        assert_relative_eq!(s.tau[0], m * l * l * s.qdd.as_ref().unwrap()[0], epsilon = 1e-14);
        assert!(s.tau[1].abs() < 1e-14);
    }
}

#[test]
fn tilt_beyond_limit_is_a_clamp_violation() {
    let mech = Mechanism::default_pan_tilt();
    let exc = Excitation {
        offsets: vec![0.0, 0.5],
        coordinates: vec![single(0.5, 0.31, 0.0), single(1.0, 0.47, 0.0)],
        duration: 1.0,
        rate: 10.0,
    };
    assert!(matches!(simulate_inverse(&mech, &exc), Err(Error::ClampViolation(_))));
    let mut clamped = exc.clone();
    clamped.clamp_coordinate(1, PAN_TILT_TILT_LIMIT);
    assert!(clamped.bound(1) <= PAN_TILT_TILT_LIMIT + 1e-15);
    simulate_inverse(&mech, &clamped).unwrap();
}

#[test]
fn harmonic_excitation_is_rejected() {
    let mech = Mechanism::default_pan_tilt();
    let exc = Excitation {
        offsets: vec![0.0, 0.0],
        coordinates: vec![single(0.3, 0.2, 0.0), single(0.3, 0.4, 0.0)],
        duration: 1.0,
        rate: 10.0,
    };
    assert!(matches!(simulate_inverse(&mech, &exc), Err(Error::InvalidExcitation(_))));
}

#[test]
fn regressor_reproduces_simulated_forces() {
    for mech in [Mechanism::default_pan_tilt(), Mechanism::default_arm(), Mechanism::default_crawler()] {
        let exc = short(Excitation::default_for(&mech.structure, 11).unwrap(), 4.0);
        let ds = simulate_inverse(&mech, &exc).unwrap();
        let model = mech.model();
        for s in &ds.samples {
            let row = model.build_regressor(s).unwrap();
            let r = row.residual(&mech.ground_truth.values, &s.tau);
            assert!(r.amax() <= 1e-10, "{} residual {}", mech.structure.name(), r.amax());
        }
    }
}

#[test]
fn arm_forces_match_lagrangian_oracle() {
    let lengths = [0.6, 0.5];
    let links = [
        LinkInertial {
            mass: 2.0,
            com: [0.3, 0.02],
            inertia_com: 0.06,
        },
        LinkInertial {
            mass: 1.2,
            com: [0.25, -0.03],
            inertia_com: 0.025,
        },
    ];
    let mech = Mechanism::two_link_arm(lengths, links, true).unwrap();
    let Structure::TwoLinkArm(arm) = &mech.structure else { unreachable!() };
    let exc = short(Excitation::default_for(&mech.structure, 5).unwrap(), 3.0);
    let ds = simulate_inverse(&mech, &exc).unwrap();
    for s in &ds.samples {
        let a = s.qdd.as_ref().unwrap();
        let want = lagrange_oracle(arm, &links, &[s.q[0], s.q[1]], &[s.qd[0], s.qd[1]], &[a[0], a[1]]);
        for (got, want) in s.tau.iter().zip(want) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}

#[test]
fn kinetic_energy_rate_equals_input_power() {
    // Arm without gravity: d/dt(½ q̇ᵀ M q̇) = τᵀ q̇.
    let lengths = [0.6, 0.5];
    let link = |m: f64, l: f64| LinkInertial {
        mass: m,
        com: [0.5 * l, 0.01],
        inertia_com: m * l * l / 12.0,
    };
    let mech = Mechanism::two_link_arm(lengths, [link(2.0, 0.6), link(1.2, 0.5)], false).unwrap();
    let exc = Excitation {
        rate: 1000.0,
        ..short(Excitation::default_for(&mech.structure, 9).unwrap(), 2.0)
    };
    let model = mech.model();
    let pi = &mech.ground_truth.values;
    let energy = |t: f64| {
        let (q, qd, _) = exc.state(t);
        0.5 * qd.dot(&(model.metric(&q, pi).unwrap() * &qd))
    };
    let h = 1e-4;
    for k in 1..20 {
        let t = k as f64 * 0.1;
        let (q, qd, qdd) = exc.state(t);
        let tau = model.inverse_dynamics(&q, &qd, &qdd, pi).unwrap();
        let rate = (energy(t + h) - energy(t - h)) / (2.0 * h);
        assert!((rate - tau.dot(&qd)).abs() <= 1e-6, "t={t}: {rate} vs {}", tau.dot(&qd));
    }
}

#[test]
fn crawler_forces_are_passive() {
    let mech = Mechanism::default_crawler();
    let exc = short(Excitation::default_for(&mech.structure, 2).unwrap(), 10.0);
    let ds = simulate_inverse(&mech, &exc).unwrap();
    assert!(ds.samples.iter().all(|s| s.tau.dot(&s.qd) >= 0.0));
}

#[test]
fn mechanism_rejects_infeasible_ground_truth() {
    assert!(Mechanism::pan_tilt(-1.0, 0.3, false).is_err());
    assert!(Mechanism::drag_crawler([0.3; 3], [(1.0, 5.0), (1.0, -5.0), (1.0, 5.0)], [0.1, 0.1]).is_err());
}

fn pan_tilt_data(seconds: f64) -> (Mechanism, Dataset) {
    let mech = Mechanism::default_pan_tilt();
    let exc = short(Excitation::default_for(&mech.structure, 1).unwrap(), seconds);
    let ds = simulate_inverse(&mech, &exc).unwrap();
    (mech, ds)
}

#[test]
fn zero_noise_is_identity_and_seeds_repeat() {
    let (mech, ds) = pan_tilt_data(2.0);
    assert_eq!(add_noise(&ds, &NoiseSpec::zero(2, 4), None).unwrap(), ds);
    let mut noise = NoiseSpec::tau_diagonal(&[0.01, 0.1], 4);
    noise.qd_std = vec![1e-3, 0.0];
    noise.ambient_std = 0.02;
    let a = add_noise(&ds, &noise, Some(&mech)).unwrap();
    let b = add_noise(&ds, &noise, Some(&mech)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, ds);
    for (x, y) in a.samples.iter().zip(&ds.samples) {
        assert_eq!(x.q, y.q);
        assert_eq!(x.qdd, y.qdd);
        assert_eq!(x.qd[1], y.qd[1]);
    }
    noise.seed = 5;
    assert_ne!(add_noise(&ds, &noise, Some(&mech)).unwrap(), a);
}

#[test]
fn ambient_noise_needs_the_mechanism() {
    let (_, ds) = pan_tilt_data(1.0);
    let mut noise = NoiseSpec::zero(2, 0);
    noise.ambient_std = 0.1;
    assert!(add_noise(&ds, &noise, None).is_err());
}

#[test]
fn indefinite_noise_covariance_is_rejected() {
    let (_, ds) = pan_tilt_data(1.0);
    let mut noise = NoiseSpec::zero(2, 0);
    noise.tau_cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(add_noise(&ds, &noise, None).is_err());
}

#[test]
fn force_noise_covariance_matches_over_many_draws() {
    let n = 100_000;
    let samples: Vec<Sample> = (0..n)
        .map(|k| Sample {
            t: k as f64,
            q: DVector::zeros(2),
            qd: DVector::zeros(2),
            qdd: Some(DVector::zeros(2)),
            tau: DVector::zeros(2),
        })
        .collect();
    let ds = Dataset::new(samples, 1.0, PHYSICAL_CHART, vec!["a".into(), "b".into()], vec!["rad".into(), "rad".into()]).unwrap();
    let cov = DMatrix::from_row_slice(2, 2, &[0.04, 0.03, 0.03, 0.09]);
    let mut noise = NoiseSpec::zero(2, 99);
    noise.tau_cov = cov.clone();
    let noisy = add_noise(&ds, &noise, None).unwrap();
    let mut emp = DMatrix::<f64>::zeros(2, 2);
    for s in &noisy.samples {
        emp += &s.tau * s.tau.transpose();
    }
    emp /= n as f64;
    for i in 0..2 {
        for j in 0..2 {
            assert!((emp[(i, j)] - cov[(i, j)]).abs() <= 0.05 * cov[(i, j)].abs(), "{emp}");
        }
    }
}

#[test]
fn ambient_noise_is_shaped_by_the_metric() {
    // Pan–tilt at fixed tilt φ: noise covariance σ² m l² diag(cos² φ, 1).
    let mech = Mechanism::default_pan_tilt();
    let phi: f64 = 0.9;
    let n = 40_000;
    let samples: Vec<Sample> = (0..n)
        .map(|k| Sample {
            t: k as f64,
            q: DVector::from_vec(vec![0.0, phi]),
            qd: DVector::zeros(2),
            qdd: Some(DVector::zeros(2)),
            tau: DVector::zeros(2),
        })
        .collect();
    let ds = Dataset::new(samples, 1.0, PHYSICAL_CHART, vec!["a".into(), "b".into()], vec!["rad".into(), "rad".into()]).unwrap();
    let mut noise = NoiseSpec::zero(2, 3);
    noise.ambient_std = 2.0;
    let noisy = add_noise(&ds, &noise, Some(&mech)).unwrap();
    let ml2 = mech.ground_truth.values[0];
    let var = |i: usize| noisy.samples.iter().map(|s| s.tau[i] * s.tau[i]).sum::<f64>() / n as f64;
    assert_relative_eq!(var(0), 4.0 * ml2 * phi.cos().powi(2), max_relative = 0.05);
    assert_relative_eq!(var(1), 4.0 * ml2, max_relative = 0.05);
}

#[test]
fn rescale_examples() {
    let (_, ds) = pan_tilt_data(1.0);
    let eye = rescale_chart(&ds, &DMatrix::identity(2, 2)).unwrap();
    assert_eq!(eye.samples, ds.samples);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
    let half = rescale_chart(&ds, &d).unwrap();
    for (a, b) in half.samples.iter().zip(&ds.samples) {
        assert_eq!(a.tau[0], 0.5 * b.tau[0]);
        assert_eq!(a.tau[1], b.tau[1]);
        assert_eq!(a.q[0], 2.0 * b.q[0]);
    }
    assert_ne!(half.chart_id, ds.chart_id);
    assert!(rescale_chart(&ds, &DMatrix::zeros(2, 2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn rescale_round_trip(entries in prop::collection::vec(-1.0f64..1.0, 4)) {
        let (_, ds) = pan_tilt_data(0.5);
        let d = DMatrix::from_row_slice(2, 2, &entries) + DMatrix::identity(2, 2) * 2.5;
        let back = rescale_chart(&rescale_chart(&ds, &d).unwrap(), &invert_chart(&d).unwrap()).unwrap();
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            prop_assert!((&a.q - &b.q).amax() < 1e-12);
            prop_assert!((&a.qd - &b.qd).amax() < 1e-12);
            prop_assert!((a.qdd.as_ref().unwrap() - b.qdd.as_ref().unwrap()).amax() < 1e-12);
            prop_assert!((&a.tau - &b.tau).amax() < 1e-12);
        }
    }
}

#[test]
fn downsample_full_size_is_identity() {
    let (mech, ds) = pan_tilt_data(2.0);
    let out = downsample(&ds, ds.len(), DownsamplePolicy::Uniform, &mech.model()).unwrap();
    assert_eq!(out, ds);
}

#[test]
fn low_data_inertia_case_keeps_rank_with_twenty_samples() {
    let mech = Mechanism::default_arm();
    let exc = Excitation::default_for(&mech.structure, 1).unwrap();
    let ds = simulate_inverse(&mech, &exc).unwrap();
    let model = mech.model();
    let full = Regression::new(&model, &ds).unwrap().rank;
    for policy in [DownsamplePolicy::Uniform, DownsamplePolicy::SeededRandom(8)] {
        let out = downsample(&ds, 20, policy, &model).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(Regression::new(&model, &out).unwrap().rank, full);
        assert!(out.samples.windows(2).all(|w| w[0].t < w[1].t));
    }
}

#[test]
fn low_data_drag_case_keeps_rank_with_forty_samples() {
    let mech = Mechanism::default_crawler();
    let exc = Excitation::default_for(&mech.structure, 1).unwrap();
    let ds = simulate_inverse(&mech, &exc).unwrap();
    let model = mech.model();
    let full = Regression::new(&model, &ds).unwrap().rank;
    let out = downsample(&ds, 40, DownsamplePolicy::SeededRandom(3), &model).unwrap();
    assert_eq!(out.len(), 40);
    assert_eq!(Regression::new(&model, &out).unwrap().rank, full);
}

#[test]
fn downsample_refuses_targets_below_parameter_count() {
    let (mech, ds) = pan_tilt_data(1.0);
    assert!(downsample(&ds, 0, DownsamplePolicy::Uniform, &mech.model()).is_err());
}
