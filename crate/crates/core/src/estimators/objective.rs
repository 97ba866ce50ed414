//! Smooth objectives shared by the estimators, their SDP embeddings and a
//! Newton polish.
//!
//! Every estimator minimizes a sum of terms over `π`. The SDP is posed in
//! coordinates `π = π_c + Q w` where the columns of `Q` split into the
//! directions the objective sees and the flat ones it does not. Flat
//! directions are dropped when nothing else constrains them (minimum-norm
//! choice) and boxed otherwise, so the central path always exists.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::{compress_least_squares, min_eigenvalue, row_and_null_space};
use crate::model::{AffineMatrix, ConsistencyConstraint, RegressorRow};
use crate::sdp::{self, least_squares_block, AffineBlock, SdpOptions, SdpProblem, SdpSolution, SdpStatus};

/// Relative singular-value threshold separating seen from flat directions.
pub const FLAT_TOL: f64 = 1e-10;

pub(crate) struct BregmanBlock {
    pub form: AffineMatrix,
    pub p0_inv: DMatrix<f64>,
    pub logdet_p0: f64,
}

pub(crate) enum Term<'a> {
    /// `‖R π − y‖² + rest`.
    Squares { r: DMatrix<f64>, y: DVector<f64>, rest: f64 },
    /// `Σᵢ rᵢᵀ Mᵢ(π)⁻¹ rᵢ` with `rᵢ = Yᵢ π − τᵢ`.
    DualMetric {
        rows: &'a [RegressorRow],
        taus: &'a [DVector<f64>],
        metrics: &'a [AffineMatrix],
    },
    /// `ρ Σ_b [tr(P_b P₀⁻¹) − logdet(P_b P₀⁻¹) − k_b]`.
    Bregman { rho: f64, blocks: Vec<BregmanBlock> },
}

fn chol_logdet(m: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let ch = m.clone().cholesky()?;
    let ld = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    ld.is_finite().then_some((ch, ld))
}

impl Term<'_> {
    fn value(&self, pi: &DVector<f64>) -> Option<f64> {
        match self {
            Term::Squares { r, y, rest } => Some((r * pi - y).norm_squared() + rest),
            Term::DualMetric { rows, taus, metrics } => {
                let mut total = 0.0;
                for ((row, tau), m) in rows.iter().zip(taus.iter()).zip(metrics.iter()) {
                    let ch = m.assemble(pi).cholesky()?;
                    let mut u = row.residual(pi, tau);
                    ch.l_dirty().solve_lower_triangular_mut(&mut u);
                    total += u.norm_squared();
                }
                Some(total)
            }
            Term::Bregman { rho, blocks } => {
                let mut total = 0.0;
                for b in blocks {
                    let p = b.form.assemble(pi);
                    let (_, ld) = chol_logdet(&p)?;
                    let tr = (&p * &b.p0_inv).trace();
                    total += tr - (ld - b.logdet_p0) - p.nrows() as f64;
                }
                Some(rho * total)
            }
        }
    }

    fn grad_hess(&self, pi: &DVector<f64>, g: &mut DVector<f64>, h: &mut DMatrix<f64>) -> Option<()> {
        let d = pi.len();
        match self {
            Term::Squares { r, y, .. } => {
                let res = r * pi - y;
                *g += r.transpose() * res * 2.0;
                *h += r.transpose() * r * 2.0;
            }
            Term::DualMetric { rows, taus, metrics } => {
                for ((row, tau), m) in rows.iter().zip(taus.iter()).zip(metrics.iter()) {
                    let ch = m.assemble(pi).cholesky()?;
                    let u = ch.solve(&row.residual(pi, tau));
                    // B = [Y_p − M_p u]_p; gradient 2Yᵀu − uᵀM_p u, Hessian 2 Bᵀ M⁻¹ B.
                    let mut b = row.y.clone();
                    for (p, mp) in m.coeffs.iter().enumerate() {
                        let mu = mp * &u;
                        g[p] += 2.0 * row.y.column(p).dot(&u) - u.dot(&mu);
                        let mut col = b.column_mut(p);
                        col -= mu;
                    }
                    let mut w = b.clone();
                    ch.l_dirty().solve_lower_triangular_mut(&mut w);
                    *h += w.transpose() * w * 2.0;
                }
            }
            Term::Bregman { rho, blocks } => {
                for b in blocks {
                    let p = b.form.assemble(pi);
                    let pinv = p.cholesky()?.inverse();
                    let pp: Vec<DMatrix<f64>> = b.form.coeffs.iter().map(|c| &pinv * c).collect();
                    for i in 0..d {
                        g[i] += rho * ((&b.form.coeffs[i] * &b.p0_inv).trace() - pp[i].trace());
                        for j in i..d {
                            let v = rho * (&pp[i] * &pp[j]).trace();
                            h[(i, j)] += v;
                            if i != j {
                                h[(j, i)] += v;
                            }
                        }
                    }
                }
            }
        }
        Some(())
    }

    /// Rows whose span is the set of directions this term depends on.
    fn sensitivity(&self, d: usize) -> DMatrix<f64> {
        match self {
            Term::Squares { r, .. } => r.clone(),
            Term::DualMetric { rows, metrics, .. } => {
                let n = rows.first().map(|r| r.y.nrows()).unwrap_or(0);
                let per = n + n * n;
                let mut s = DMatrix::zeros(rows.len() * per, d);
                for (i, (row, m)) in rows.iter().zip(metrics.iter()).enumerate() {
                    s.view_mut((i * per, 0), (n, d)).copy_from(&row.y);
                    for (p, mp) in m.coeffs.iter().enumerate() {
                        for (k, v) in mp.iter().enumerate() {
                            s[(i * per + n + k, p)] = *v;
                        }
                    }
                }
                compress(&s)
            }
            Term::Bregman { blocks, .. } => {
                let rows: usize = blocks.iter().map(|b| b.form.size() * b.form.size()).sum();
                let mut s = DMatrix::zeros(rows, d);
                let mut at = 0;
                for b in blocks {
                    let k = b.form.size();
                    for (p, c) in b.form.coeffs.iter().enumerate() {
                        for (idx, v) in c.iter().enumerate() {
                            s[(at + idx, p)] = *v;
                        }
                    }
                    at += k * k;
                }
                s
            }
        }
    }
}

/// Square factor with the same row space (and column norms) as `s`.
fn compress(s: &DMatrix<f64>) -> DMatrix<f64> {
    if s.nrows() <= s.ncols() {
        return s.clone();
    }
    compress_least_squares(s, &DVector::zeros(s.nrows())).0
}

pub(crate) struct Objective<'a> {
    pub d: usize,
    pub terms: Vec<Term<'a>>,
}

impl<'a> Objective<'a> {
    pub fn value(&self, pi: &DVector<f64>) -> Option<f64> {
        let mut v = 0.0;
        for t in &self.terms {
            v += t.value(pi)?;
        }
        v.is_finite().then_some(v)
    }

    pub fn grad_hess(&self, pi: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut g = DVector::zeros(self.d);
        let mut h = DMatrix::zeros(self.d, self.d);
        for t in &self.terms {
            t.grad_hess(pi, &mut g, &mut h)?;
        }
        Some((g, h))
    }

    /// Orthonormal `(seen, flat)` bases of parameter space.
    pub fn split(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut stacked = DMatrix::zeros(0, self.d);
        for t in &self.terms {
            let s = t.sensitivity(self.d);
            // Each block is scaled to unit size so that terms of very
            // different magnitude cannot hide each other.
            let scale = s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            let s = s / scale;
            let rows = stacked.nrows();
            stacked = stacked.resize_vertically(rows + s.nrows(), 0.0);
            stacked.view_mut((rows, 0), (s.nrows(), self.d)).copy_from(&s);
            stacked = compress(&stacked);
        }
        row_and_null_space(&stacked, FLAT_TOL)
    }
}

/// How the SDP treats flat directions and which blocks constrain `π`.
pub(crate) struct Setup<'c> {
    pub constraints: &'c [ConsistencyConstraint],
    /// Reference point: box center for flat directions and warm start.
    pub reference: DVector<f64>,
    pub box_halfwidth: f64,
    pub options: SdpOptions,
}

pub(crate) struct Solved {
    pub pi: DVector<f64>,
    pub solution: SdpSolution,
    pub flat: usize,
    pub polished: bool,
    /// `(slack, rᵀ M⁻¹ r)` per dual-metric sample, from the SDP iterate.
    pub schur_pairs: Vec<(f64, Option<f64>)>,
}

fn reparam_terms(form: &AffineMatrix, center: &DVector<f64>, q: &DMatrix<f64>, var0: usize) -> (DMatrix<f64>, Vec<(usize, DMatrix<f64>)>) {
    let re = form.reparametrize(center, q);
    let terms = re.coeffs.into_iter().enumerate().map(|(j, f)| (var0 + j, f)).collect();
    (re.constant, terms)
}

/// Poses `objective` as an SDP, solves it and polishes the minimizer.
pub(crate) fn solve(objective: &Objective<'_>, setup: &Setup<'_>) -> Result<Solved> {
    let d = objective.d;
    let (seen, flat) = objective.split();
    let constrained = !setup.constraints.is_empty();
    let (center, q) = if constrained {
        let mut q = DMatrix::zeros(d, d);
        q.columns_mut(0, seen.ncols()).copy_from(&seen);
        q.columns_mut(seen.ncols(), flat.ncols()).copy_from(&flat);
        (setup.reference.clone(), q)
    } else {
        (DVector::zeros(d), seen.clone())
    };
    let nw = q.ncols();
    let nflat = if constrained { flat.ncols() } else { 0 };

    let mut blocks: Vec<AffineBlock> = Vec::new();
    let mut objective_c: Vec<f64> = vec![0.0; nw];
    let mut next = nw;
    let mut slack_vars: Vec<usize> = Vec::new();
    for t in &objective.terms {
        match t {
            Term::Squares { r, y, .. } => {
                let rq = r * &q;
                let yc = y - r * &center;
                let vars: Vec<usize> = (0..nw).collect();
                blocks.push(least_squares_block(&rq, &yc, &vars, next)?);
                objective_c.push(1.0);
                next += 1;
            }
            Term::DualMetric { rows, taus, metrics } => {
                for ((row, tau), m) in rows.iter().zip(taus.iter()).zip(metrics.iter()) {
                    let n = tau.len();
                    let yq = &row.y * &q;
                    let rc = row.residual(&center, tau);
                    let (m0, mterms) = reparam_terms(m, &center, &q, 0);
                    let mut f0 = DMatrix::zeros(n + 1, n + 1);
                    f0.view_mut((0, 0), (n, n)).copy_from(&m0);
                    for i in 0..n {
                        f0[(i, n)] = rc[i];
                        f0[(n, i)] = rc[i];
                    }
                    let mut terms = Vec::with_capacity(nw + 1);
                    for (j, mj) in mterms {
                        let mut f = DMatrix::zeros(n + 1, n + 1);
                        f.view_mut((0, 0), (n, n)).copy_from(&mj);
                        for i in 0..n {
                            f[(i, n)] = yq[(i, j)];
                            f[(n, i)] = yq[(i, j)];
                        }
                        terms.push((j, f));
                    }
                    let mut fs = DMatrix::zeros(n + 1, n + 1);
                    fs[(n, n)] = 1.0;
                    terms.push((next, fs));
                    blocks.push(AffineBlock::new(f0, terms)?);
                    objective_c.push(1.0);
                    slack_vars.push(next);
                    next += 1;
                }
            }
            Term::Bregman { rho, blocks: bb } => {
                for b in bb {
                    let (p0, terms) = reparam_terms(&b.form, &center, &q, 0);
                    for (j, f) in &terms {
                        objective_c[*j] += rho * (f * &b.p0_inv).trace();
                    }
                    blocks.push(AffineBlock::logdet(p0, terms, *rho)?);
                }
            }
        }
    }
    for c in setup.constraints {
        let (mut f0, terms) = reparam_terms(&c.form, &center, &q, 0);
        for i in 0..f0.nrows() {
            f0[(i, i)] -= c.margin;
        }
        blocks.push(AffineBlock::new(f0, terms)?);
    }
    for k in 0..nflat {
        let j = nw - nflat + k;
        let one = DMatrix::identity(1, 1);
        let b = DMatrix::from_element(1, 1, setup.box_halfwidth);
        blocks.push(AffineBlock::new(b.clone(), vec![(j, one.clone())])?);
        blocks.push(AffineBlock::new(b, vec![(j, -one)])?);
    }
    let problem = SdpProblem::new(DVector::from_vec(objective_c), blocks)?;

    let mut options = setup.options.clone();
    if options.initial.is_none() {
        options.initial = warm_start(objective, &problem, &center, &q, &setup.reference, nw);
    }
    let solution = sdp::solve(&problem, &options)?;
    if solution.status == SdpStatus::Infeasible {
        return Err(Error::Infeasible(solution.certificates.primal_residual.max(solution.certificates.dual_residual)));
    }
    let w = solution.x.rows(0, nw).into_owned();
    let pi_sdp = &center + &q * &w;

    let mut schur_pairs = Vec::new();
    for t in &objective.terms {
        if let Term::DualMetric { rows, taus, metrics } = t {
            for (((row, tau), m), sv) in rows.iter().zip(taus.iter()).zip(metrics.iter()).zip(&slack_vars) {
                let r = row.residual(&pi_sdp, tau);
                let exact = crate::linalg::dual_norm_sq(&m.assemble(&pi_sdp), &r).ok();
                schur_pairs.push((solution.x[*sv], exact));
            }
        }
    }

    let (pi, polished) = if solution.status == SdpStatus::NumericalFailure {
        (pi_sdp.clone(), false)
    } else {
        polish(objective, setup.constraints, &pi_sdp, &seen)
    };
    Ok(Solved {
        pi,
        solution,
        flat: flat.ncols(),
        polished,
        schur_pairs,
    })
}

/// A strictly feasible start built from the reference point, when it is one.
fn warm_start(
    objective: &Objective<'_>,
    problem: &SdpProblem,
    center: &DVector<f64>,
    q: &DMatrix<f64>,
    reference: &DVector<f64>,
    nw: usize,
) -> Option<DVector<f64>> {
    let w = q.transpose() * (reference - center);
    let pi = center + q * &w;
    let mut x = DVector::zeros(problem.dim);
    x.rows_mut(0, nw).copy_from(&w);
    let mut at = nw;
    for t in &objective.terms {
        match t {
            Term::Squares { .. } => {
                let v = t.value(&pi)?;
                x[at] = 2.0 * v + 1.0;
                at += 1;
            }
            Term::DualMetric { rows, taus, metrics } => {
                for ((row, tau), m) in rows.iter().zip(taus.iter()).zip(metrics.iter()) {
                    let ch = m.assemble(&pi).cholesky()?;
                    let mut u = row.residual(&pi, tau);
                    ch.l_dirty().solve_lower_triangular_mut(&mut u);
                    x[at] = 2.0 * u.norm_squared() + 1.0;
                    at += 1;
                }
            }
            Term::Bregman { .. } => {}
        }
    }
    let strict = problem.blocks.iter().all(|b| {
        let f = b.evaluate(&x);
        let scale = f.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        min_eigenvalue(&f) > 1e-9 * scale
    });
    strict.then_some(x)
}

fn feasible(constraints: &[ConsistencyConstraint], pi: &DVector<f64>) -> bool {
    constraints.iter().all(|c| c.min_eigenvalue(pi) >= c.margin)
}

/// Damped Newton on the smooth objective along the seen directions,
/// keeping every iterate inside the constraints. Returns the start when
/// nothing improves.
pub(crate) fn polish(
    objective: &Objective<'_>,
    constraints: &[ConsistencyConstraint],
    start: &DVector<f64>,
    seen: &DMatrix<f64>,
) -> (DVector<f64>, bool) {
    let Some(f_start) = objective.value(start) else {
        return (start.clone(), false);
    };
    if seen.ncols() == 0 || !feasible(constraints, start) {
        return (start.clone(), false);
    }
    let mut pi = start.clone();
    let mut f = f_start;
    let mut moved = false;
    for _ in 0..60 {
        let Some((g, h)) = objective.grad_hess(&pi) else { break };
        let gr = seen.transpose() * &g;
        let hr = seen.transpose() * &h * seen;
        let hr = (&hr + hr.transpose()) * 0.5;
        let scale = hr.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            break;
        }
        let mut step = None;
        for ridge in [0.0, 1e-14, 1e-12, 1e-10] {
            let mut m = hr.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += ridge * scale;
            }
            if let Some(ch) = m.cholesky() {
                step = Some(-ch.solve(&gr));
                break;
            }
        }
        let Some(dz) = step else { break };
        let decrement = -gr.dot(&dz);
        if !(decrement > 1e-28 * f.abs().max(1e-300)) {
            break;
        }
        let dpi = seen * &dz;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &pi + &dpi * alpha;
            if let Some(fc) = objective.value(&cand) {
                if fc <= f - 1e-4 * alpha * decrement && feasible(constraints, &cand) {
                    pi = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        moved = true;
        if dpi.norm() * alpha <= 1e-15 * pi.norm().max(1e-300) {
            break;
        }
    }
    if moved && f <= f_start {
        (pi, true)
    } else {
        (start.clone(), false)
    }
}
