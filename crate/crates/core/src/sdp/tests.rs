use super::*;
use alloc::vec;
use approx::assert_relative_eq;

fn m(rows: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, rows, v)
}

fn opts() -> SdpOptions {
    SdpOptions::default()
}

fn check_certificates(sol: &SdpSolution, o: &SdpOptions) {
    assert_eq!(sol.status, SdpStatus::Optimal, "{}", sol.message);
    assert!(sol.certificates.dual_residual <= o.tol_feas);
    assert!(sol.certificates.duality_gap <= o.tol_gap);
    assert!(sol.certificates.complementarity <= o.tol_gap);
    assert!(sol.certificates.min_block_eigenvalues.iter().all(|e| *e >= -o.tol_feas));
}

#[test]
fn two_by_two_schur_example() {
    // min x s.t. [[x, 1], [1, x]] ⪰ 0  →  x* = 1.
    let blk = AffineBlock::new(m(2, &[0.0, 1.0, 1.0, 0.0]), vec![(0, DMatrix::identity(2, 2))]).unwrap();
    let p = SdpProblem::new(DVector::from_element(1, 1.0), vec![blk]).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    check_certificates(&sol, &opts());
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
}

#[test]
fn epigraph_with_fixed_residual() {
    // min s s.t. [[I₂, r], [rᵀ, s]] ⪰ 0 with r = (1, 0)  →  s* = 1.
    let mut f0 = DMatrix::identity(3, 3);
    f0[(2, 2)] = 0.0;
    f0[(0, 2)] = 1.0;
    f0[(2, 0)] = 1.0;
    let mut fs = DMatrix::zeros(3, 3);
    fs[(2, 2)] = 1.0;
    let p = SdpProblem::new(DVector::from_element(1, 1.0), vec![AffineBlock::new(f0, vec![(0, fs)]).unwrap()]).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    check_certificates(&sol, &opts());
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
}

#[test]
fn feasibility_report_examples() {
    let zero = AffineBlock::new(DMatrix::zeros(2, 2), vec![(0, DMatrix::identity(2, 2))]).unwrap();
    let ident = AffineBlock::new(DMatrix::identity(3, 3), vec![(0, DMatrix::zeros(3, 3) + m(3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))]).unwrap();
    let p = SdpProblem::new(DVector::from_element(1, 1.0), vec![zero, ident]).unwrap();
    let r = feasible(&p, &DVector::zeros(1), 1e-8).unwrap();
    assert!(r.feasible);
    assert_eq!(r.min_eig_per_block[0], 0.0);
    assert_relative_eq!(r.min_eig_per_block[1], 1.0, epsilon = 1e-14);
    let r = feasible(&p, &DVector::from_element(1, -0.5), 1e-8).unwrap();
    assert!(!r.feasible);
    assert!(feasible(&p, &DVector::zeros(2), 1e-8).is_err());
}

#[test]
fn qp_examples() {
    // Q = I, c = −(2, 2), no constraints  →  x* = (2, 2). An objective error
    // ε moves x by about √ε, hence the tight gap.
    let p = qp_as_sdp(&DMatrix::identity(2, 2), &DVector::from_vec(vec![-2.0, -2.0]), vec![]).unwrap();
    let o = SdpOptions { tol_gap: 1e-11, tol_feas: 1e-11, ..opts() };
    let sol = solve(&p, &o).unwrap();
    check_certificates(&sol, &o);
    assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-6);
    assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-6);
    assert_relative_eq!(sol.objective_value, -4.0, epsilon = 1e-6);

    // Q = 0 reduces to the plain LMI problem.
    let lmi = AffineBlock::new(m(2, &[0.0, 1.0, 1.0, 0.0]), vec![(0, DMatrix::identity(2, 2))]).unwrap();
    let direct = solve(&SdpProblem::new(DVector::from_element(1, 1.0), vec![lmi.clone()]).unwrap(), &opts()).unwrap();
    let p = qp_as_sdp(&DMatrix::zeros(1, 1), &DVector::from_element(1, 1.0), vec![lmi]).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_relative_eq!(sol.x[0], direct.x[0], epsilon = 1e-6);

    assert!(matches!(
        qp_as_sdp(&m(2, &[1.0, 0.0, 0.0, -1.0]), &DVector::zeros(2), vec![]),
        Err(Error::NotPsd(_))
    ));
}

#[test]
fn logdet_block_has_closed_form_minimizer() {
    // min x − w log x over x > 0  →  x* = w.
    for w in [0.01, 1.0, 30.0] {
        let blk = AffineBlock::logdet(DMatrix::zeros(1, 1), vec![(0, DMatrix::identity(1, 1))], w).unwrap();
        let p = SdpProblem::new(DVector::from_element(1, 1.0), vec![blk]).unwrap();
        let sol = solve(&p, &opts()).unwrap();
        check_certificates(&sol, &opts());
        assert_relative_eq!(sol.x[0], w, max_relative = 1e-7);
    }
    // Mixed with a cone: min x − log x s.t. x ≤ 0.5  →  boundary x* = 0.5.
    let ld = AffineBlock::logdet(DMatrix::zeros(1, 1), vec![(0, DMatrix::identity(1, 1))], 1.0).unwrap();
    let cap = AffineBlock::new(DMatrix::from_element(1, 1, 0.5), vec![(0, -DMatrix::identity(1, 1))]).unwrap();
    let p = SdpProblem::new(DVector::from_element(1, 1.0), vec![ld, cap]).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    check_certificates(&sol, &opts());
    assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-7);
}

#[test]
fn matrix_logdet_matches_analytic_center() {
    // min tr(X) − logdet X over 2×2 X = [[a, b], [b, c]]  →  X = I.
    let e = |i: usize, j: usize| {
        let mut f = DMatrix::zeros(2, 2);
        f[(i, j)] = 1.0;
        f[(j, i)] = 1.0;
        f
    };
    let blk = AffineBlock::logdet(DMatrix::zeros(2, 2), vec![(0, e(0, 0)), (1, e(0, 1)), (2, e(1, 1))], 1.0).unwrap();
    let p = SdpProblem::new(DVector::from_vec(vec![1.0, 0.0, 1.0]), vec![blk]).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    check_certificates(&sol, &opts());
    assert_relative_eq!(sol.x, DVector::from_vec(vec![1.0, 0.0, 1.0]), epsilon = 1e-7);
    assert_relative_eq!(sol.objective_value, 2.0, epsilon = 1e-7);
}

#[test]
fn infeasible_problem_is_detected() {
    // x ≥ 1 and x ≤ −1.
    let a = AffineBlock::new(DMatrix::from_element(1, 1, -1.0), vec![(0, DMatrix::identity(1, 1))]).unwrap();
    let b = AffineBlock::new(DMatrix::from_element(1, 1, -1.0), vec![(0, -DMatrix::identity(1, 1))]).unwrap();
    let p = SdpProblem::new(DVector::from_element(1, 0.0), vec![a, b]).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SdpStatus::Infeasible);
}

#[test]
fn malformed_problems_are_rejected() {
    assert!(matches!(SdpProblem::new(DVector::zeros(1), vec![]), Err(Error::MalformedProblem(_))));
    let blk = AffineBlock::new(DMatrix::identity(1, 1), vec![(0, DMatrix::identity(1, 1))]).unwrap();
    // Variable 1 appears in no block.
    assert!(matches!(SdpProblem::new(DVector::zeros(2), vec![blk.clone()]), Err(Error::MalformedProblem(_))));
    assert!(matches!(
        AffineBlock::new(DMatrix::identity(2, 2), vec![(0, m(2, &[0.0, 1.0, 0.0, 0.0]))]),
        Err(Error::Asymmetric(_))
    ));
    let mut bad = blk;
    bad.terms[0].0 = 5;
    assert!(SdpProblem::new(DVector::zeros(1), vec![bad]).is_err());
}

#[test]
fn equality_constraints_are_eliminated() {
    // min x₀ + 2x₁ s.t. x₀ + x₁ = 1, x ≥ 0  →  (1, 0).
    let e = |j: usize| (j, DMatrix::identity(1, 1));
    let p = SdpProblem::new(
        DVector::from_vec(vec![1.0, 2.0]),
        vec![
            AffineBlock::new(DMatrix::zeros(1, 1), vec![e(0)]).unwrap(),
            AffineBlock::new(DMatrix::zeros(1, 1), vec![e(1)]).unwrap(),
        ],
    )
    .unwrap()
    .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 1.0))
    .unwrap();
    let sol = solve(&p, &opts()).unwrap();
    check_certificates(&sol, &opts());
    assert!(sol.certificates.primal_residual < 1e-12);
    assert_relative_eq!(sol.x, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-7);
    assert_relative_eq!(sol.objective_value, 1.0, epsilon = 1e-7);
}

#[test]
fn dependent_coefficients_are_projected_out() {
    // Only x₀ + x₁ and x₂ enter: u + x₂ ≥ 1, u − x₂ ≥ −1 with u = x₀ + x₁.
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let blocks = vec![
        AffineBlock::new(one(-1.0), vec![(0, one(1.0)), (1, one(1.0)), (2, one(1.0))]).unwrap(),
        AffineBlock::new(one(1.0), vec![(0, one(1.0)), (1, one(1.0)), (2, one(-1.0))]).unwrap(),
    ];
    let p = SdpProblem::new(DVector::from_vec(vec![1.0, 1.0, 0.5]), blocks.clone()).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    check_certificates(&sol, &opts());
    assert_relative_eq!(sol.objective_value, 0.5, epsilon = 1e-7);
    assert_relative_eq!(sol.x[0] + sol.x[1], 0.0, epsilon = 1e-7);
    assert_relative_eq!(sol.x[2], 1.0, epsilon = 1e-7);
    assert!(sol.x.norm() < 2.0);

    // Cost along the flat direction (1, −1, 0) makes it unbounded.
    let p = SdpProblem::new(DVector::from_vec(vec![1.0, 0.0, 0.5]), blocks).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SdpStatus::NumericalFailure);
}

fn sample_problem() -> SdpProblem {
    // A few Schur blocks sharing two global variables plus local slacks,
    // the shape the dual-metric estimator produces.
    let mut blocks = Vec::new();
    let n = 6;
    let dim = 2 + n;
    for i in 0..n {
        let t = i as f64 * 0.7;
        let y = [t.sin() + 1.5, t.cos()];
        let tau = 2.0 * y[0] - 0.5 * y[1] + 0.1 * (3.0 * t).sin();
        let mut f0 = DMatrix::zeros(2, 2);
        f0[(0, 1)] = -tau;
        f0[(1, 0)] = -tau;
        let mut terms = Vec::new();
        for (j, yj) in y.iter().enumerate() {
            let mut f = DMatrix::zeros(2, 2);
            f[(0, 1)] = *yj;
            f[(1, 0)] = *yj;
            // Metric π₀·(1 + 0.3 sin t) + π₁·0.2.
            f[(0, 0)] = if j == 0 { 1.0 + 0.3 * t.sin() } else { 0.2 };
            terms.push((j, f));
        }
        let mut fs = DMatrix::zeros(2, 2);
        fs[(1, 1)] = 1.0;
        terms.push((2 + i, fs));
        blocks.push(AffineBlock::new(f0, terms).unwrap());
    }
    for j in 0..2 {
        blocks.push(AffineBlock::new(DMatrix::zeros(1, 1), vec![(j, DMatrix::identity(1, 1))]).unwrap());
    }
    let mut c = DVector::zeros(dim);
    for i in 0..n {
        c[2 + i] = 1.0;
    }
    SdpProblem::new(c, blocks).unwrap()
}

#[test]
fn schur_slacks_are_tight_at_optimum() {
    let p = sample_problem();
    let o = SdpOptions { tol_gap: 1e-10, tol_feas: 1e-10, ..opts() };
    let sol = solve(&p, &o).unwrap();
    check_certificates(&sol, &o);
    for (i, blk) in p.blocks.iter().take(6).enumerate() {
        let f = blk.evaluate(&sol.x);
        let s = f[(1, 1)];
        let schur = f[(0, 1)] * f[(0, 1)] / f[(0, 0)];
        assert!((s - schur).abs() <= 1e-8 * s.max(1.0), "sample {i}: {s} vs {schur}");
    }
}

#[test]
fn weak_duality_holds_up_to_dual_infeasibility() {
    let sol = solve(&sample_problem(), &opts()).unwrap();
    assert!(!sol.history.is_empty());
    for rec in &sol.history {
        assert!(rec.dual - rec.primal <= rec.dual_infeasibility_term.abs() + 1e-9 * rec.primal.abs().max(1.0));
    }
    assert!(sol.dual_value <= sol.objective_value + 1e-8 * sol.objective_value.abs().max(1.0));
}

#[test]
fn solves_are_deterministic() {
    let p = sample_problem();
    let a = solve(&p, &opts()).unwrap();
    let b = solve(&p, &opts()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.x.as_slice(), b.x.as_slice());
    assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
}

#[test]
fn objective_scaling_leaves_minimizer_unchanged() {
    let p = sample_problem();
    let mut scaled = p.clone();
    scaled.objective *= 1e3;
    let o = SdpOptions { tol_gap: 1e-10, tol_feas: 1e-10, ..opts() };
    let a = solve(&p, &o).unwrap();
    let b = solve(&scaled, &o).unwrap();
    check_certificates(&b, &o);
    let rel = (&a.x - &b.x).norm() / a.x.norm();
    assert!(rel < 1e-6, "relative change {rel}");
}

#[test]
fn triplet_dump_round_trips() {
    let mut p = sample_problem();
    p.blocks.push(AffineBlock::logdet(DMatrix::identity(1, 1), vec![(0, DMatrix::identity(1, 1))], 0.25).unwrap());
    let p = p.with_equalities(DMatrix::from_row_slice(1, 8, &[0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0]), DVector::zeros(1)).unwrap();
    let text = to_triplets(&p);
    let back = from_triplets(&text).unwrap();
    assert_eq!(back, p);
    assert!(from_triplets("m 1\nblocks 1\nc 1\n1 2 1 0 1.0\n").is_err());
}

#[test]
fn starts_from_given_strictly_feasible_point() {
    let p = sample_problem();
    let mut x0 = DVector::from_element(8, 1.0);
    for i in 2..8 {
        x0[i] = 100.0;
    }
    let o = SdpOptions { initial: Some(x0), ..opts() };
    let sol = solve(&p, &o).unwrap();
    check_certificates(&sol, &o);
    assert_eq!(sol.phase_one_iterations, 0);
    let reference = solve(&p, &opts()).unwrap();
    assert_relative_eq!(sol.objective_value, reference.objective_value, max_relative = 1e-7);
}
