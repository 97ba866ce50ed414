//! Primal-dual path-following with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector.
//!
//! Iterates stay primal feasible (`S = F(x) ≻ 0`); the dual residual
//! `c − A*(Z)` is driven to zero by the Newton steps. A strictly feasible
//! start comes from a phase-one problem `min t s.t. F(x) + tI ⪰ 0`, stopped as
//! soon as `t` is comfortably negative.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use super::{AffineBlock, BlockKind, Certificates, IterationRecord, SdpOptions, SdpProblem, SdpSolution, SdpStatus};
use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, min_eigenvalue, row_and_null_space, sym_part};

struct Blk {
    constant: DMatrix<f64>,
    vars: Vec<usize>,
    mats: Vec<DMatrix<f64>>,
    weight: Option<f64>,
    /// `(position in vars, index in the reduced global system)`.
    global: Vec<(usize, usize)>,
    /// Positions in `vars` of variables that appear only in this block.
    local: Vec<usize>,
}

impl Blk {
    fn size(&self) -> usize {
        self.constant.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (j, f) in self.vars.iter().zip(&self.mats) {
            let v = x[*j];
            if v != 0.0 {
                m += f * v;
            }
        }
        m
    }
}

struct Prepared {
    c: DVector<f64>,
    blks: Vec<Blk>,
    /// Global variable of each reduced-system index.
    global_vars: Vec<usize>,
    /// Barrier parameter denominator: total size of the cone blocks.
    nu: usize,
}

fn prepare(blocks: &[AffineBlock], c: DVector<f64>) -> Prepared {
    let dim = c.len();
    let mut count = vec![0usize; dim];
    for b in blocks {
        for (j, _) in &b.terms {
            count[*j] += 1;
        }
    }
    let mut gindex = vec![usize::MAX; dim];
    let mut global_vars = Vec::new();
    for j in 0..dim {
        if count[j] > 1 {
            gindex[j] = global_vars.len();
            global_vars.push(j);
        }
    }
    let mut nu = 0;
    let blks = blocks
        .iter()
        .map(|b| {
            let vars: Vec<usize> = b.terms.iter().map(|(j, _)| *j).collect();
            let mats = b.terms.iter().map(|(_, f)| f.clone()).collect();
            let mut global = Vec::new();
            let mut local = Vec::new();
            for (pos, j) in vars.iter().enumerate() {
                if count[*j] > 1 {
                    global.push((pos, gindex[*j]));
                } else {
                    local.push(pos);
                }
            }
            let weight = match b.kind {
                BlockKind::Cone => {
                    nu += b.size();
                    None
                }
                BlockKind::LogDet { weight } => Some(weight),
            };
            Blk {
                constant: b.constant.clone(),
                vars,
                mats,
                weight,
                global,
                local,
            }
        })
        .collect();
    Prepared {
        c,
        blks,
        global_vars,
        nu,
    }
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// NT scaling of one block: `R⁻¹ S R⁻ᵀ = Rᵀ Z R = Λ`, and the scaled
/// coefficients `G_j = R⁻¹ F_j R⁻ᵀ`.
struct Scaled {
    rinv: DMatrix<f64>,
    lam: DVector<f64>,
    g: Vec<DMatrix<f64>>,
    h: DMatrix<f64>,
}

fn scale_block(blk: &Blk, s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaled> {
    let k = blk.size();
    let ls = s.clone().cholesky()?.l();
    let lz = z.clone().cholesky()?.l();
    let svd = (lz.transpose() * &ls).svd(false, true);
    let lam = svd.singular_values;
    let vt = svd.v_t?;
    if lam.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return None;
    }
    let ls_inv = ls.solve_lower_triangular(&DMatrix::identity(k, k))?;
    let root = DMatrix::from_diagonal(&lam.map(|l| l.sqrt()));
    let rinv = root * vt * ls_inv;
    let rinv_t = rinv.transpose();
    let g: Vec<DMatrix<f64>> = blk.mats.iter().map(|f| sym_part(&(&rinv * f * &rinv_t))).collect();
    let nv = g.len();
    let mut h = DMatrix::zeros(nv, nv);
    for a in 0..nv {
        for b in a..nv {
            let v = frob(&g[a], &g[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Some(Scaled { rinv, lam, g, h })
}

fn cholesky_with_ridge(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.nrows() == 0 {
        return m.cholesky();
    }
    let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for ridge in [0.0, 1e-14, 1e-12, 1e-10] {
        let mut r = m.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += ridge * scale;
        }
        if let Some(ch) = r.cholesky() {
            return Some(ch);
        }
    }
    None
}

/// Cholesky factor of a block's local Hessian and `H_ll⁻¹ H_lg`.
type LocalFactor = (Cholesky<f64, Dyn>, DMatrix<f64>);

/// Factored Newton system with per-block elimination of local variables.
struct System {
    k: Option<Cholesky<f64, Dyn>>,
    local: Vec<Option<LocalFactor>>,
}

impl System {
    fn factor(p: &Prepared, scaled: &[Scaled]) -> Option<System> {
        let ng = p.global_vars.len();
        let mut k = DMatrix::zeros(ng, ng);
        let mut local = Vec::with_capacity(p.blks.len());
        for (blk, sc) in p.blks.iter().zip(scaled) {
            for &(pa, ga) in &blk.global {
                for &(pb, gb) in &blk.global {
                    k[(ga, gb)] += sc.h[(pa, pb)];
                }
            }
            if blk.local.is_empty() {
                local.push(None);
                continue;
            }
            let nl = blk.local.len();
            let hll = DMatrix::from_fn(nl, nl, |i, j| sc.h[(blk.local[i], blk.local[j])]);
            let ch = cholesky_with_ridge(hll)?;
            let hlg = DMatrix::from_fn(nl, blk.global.len(), |i, j| sc.h[(blk.local[i], blk.global[j].0)]);
            let w = ch.solve(&hlg);
            let correction = hlg.transpose() * &w;
            for (a, &(_, ga)) in blk.global.iter().enumerate() {
                for (b, &(_, gb)) in blk.global.iter().enumerate() {
                    k[(ga, gb)] -= correction[(a, b)];
                }
            }
            local.push(Some((ch, w)));
        }
        let k = if ng > 0 { Some(cholesky_with_ridge(sym_part(&k))?) } else { None };
        Some(System { k, local })
    }

    /// Solves for `Δx` given the scaled complementarity targets `E_b`
    /// (`Δŝ + Δẑ = E`) and returns `(Δx, Δŝ, Δẑ)`.
    fn solve(
        &self,
        p: &Prepared,
        scaled: &[Scaled],
        e: &[DMatrix<f64>],
        rd: &DVector<f64>,
    ) -> (DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let ng = p.global_vars.len();
        let mut rhs = DVector::zeros(ng);
        for (gi, j) in p.global_vars.iter().enumerate() {
            rhs[gi] = -rd[*j];
        }
        let mut block_g: Vec<DVector<f64>> = Vec::with_capacity(p.blks.len());
        for ((blk, sc), eb) in p.blks.iter().zip(scaled).zip(e) {
            let g = DVector::from_fn(blk.vars.len(), |pos, _| frob(&sc.g[pos], eb));
            for &(pos, gi) in &blk.global {
                rhs[gi] += g[pos];
            }
            if let Some((_, w)) = &self.local[block_g.len()] {
                let gl = DVector::from_fn(blk.local.len(), |i, _| g[blk.local[i]] - rd[blk.vars[blk.local[i]]]);
                let corr = w.transpose() * gl;
                for (a, &(_, gi)) in blk.global.iter().enumerate() {
                    rhs[gi] -= corr[a];
                }
            }
            block_g.push(g);
        }
        let dxg = match &self.k {
            Some(ch) => ch.solve(&rhs),
            None => DVector::zeros(0),
        };
        let mut dx = DVector::zeros(p.c.len());
        for (gi, j) in p.global_vars.iter().enumerate() {
            dx[*j] = dxg[gi];
        }
        for ((blk, g), loc) in p.blks.iter().zip(&block_g).zip(&self.local) {
            if let Some((ch, w)) = loc {
                let gl = DVector::from_fn(blk.local.len(), |i, _| g[blk.local[i]] - rd[blk.vars[blk.local[i]]]);
                let xg = DVector::from_fn(blk.global.len(), |a, _| dxg[blk.global[a].1]);
                let xl = ch.solve(&gl) - w * xg;
                for (i, pos) in blk.local.iter().enumerate() {
                    dx[blk.vars[*pos]] = xl[i];
                }
            }
        }
        let mut ds = Vec::with_capacity(p.blks.len());
        let mut dz = Vec::with_capacity(p.blks.len());
        for ((blk, sc), eb) in p.blks.iter().zip(scaled).zip(e) {
            let mut d = DMatrix::zeros(blk.size(), blk.size());
            for (pos, j) in blk.vars.iter().enumerate() {
                d += &sc.g[pos] * dx[*j];
            }
            dz.push(eb - &d);
            ds.push(d);
        }
        (dx, ds, dz)
    }
}

/// Largest `α` keeping `Λ + α D ⪰ 0` (`+∞` if unbounded).
fn max_step(lam: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let k = lam.len();
    let m = DMatrix::from_fn(k, k, |i, j| d[(i, j)] / (lam[i] * lam[j]).sqrt());
    let lo = min_eigenvalue(&m);
    if lo >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lo
    }
}

/// `E` solving `½(Λ E + E Λ) = B`.
fn lyap_diag(lam: &DVector<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let k = lam.len();
    DMatrix::from_fn(k, k, |i, j| 2.0 * b[(i, j)] / (lam[i] + lam[j]))
}

struct Stats {
    pobj: f64,
    dobj: f64,
    rd: DVector<f64>,
    rd_rel: f64,
    gap_rel: f64,
    comp_rel: f64,
    mu: f64,
    rd_dot_x: f64,
}

fn stats(p: &Prepared, x: &DVector<f64>, s: &[DMatrix<f64>], z: &[DMatrix<f64>]) -> Option<Stats> {
    let mut rd = p.c.clone();
    let mut pobj = p.c.dot(x);
    let mut dobj = 0.0;
    let mut cone_comp = 0.0;
    let mut comp = 0.0;
    for ((blk, sb), zb) in p.blks.iter().zip(s).zip(z) {
        for (j, f) in blk.vars.iter().zip(&blk.mats) {
            rd[*j] -= frob(f, zb);
        }
        dobj -= frob(&blk.constant, zb);
        let sz = frob(sb, zb);
        match blk.weight {
            None => {
                cone_comp += sz;
                comp += sz;
            }
            Some(w) => {
                let k = blk.size() as f64;
                let ld_s = logdet(&sb.clone().cholesky()?);
                let ld_z = logdet(&zb.clone().cholesky()?);
                pobj -= w * ld_s;
                dobj += w * ld_z + w * k - w * k * w.ln();
                comp += sz - w * (ld_s + ld_z - k * w.ln()) - w * k;
            }
        }
    }
    let scale = pobj.abs().max(1.0);
    let mu = if p.nu > 0 { cone_comp / p.nu as f64 } else { 0.0 };
    Some(Stats {
        pobj,
        dobj,
        rd_rel: rd.norm() / (1.0 + p.c.norm()),
        rd_dot_x: rd.dot(x),
        rd,
        gap_rel: (pobj - dobj).abs() / scale,
        comp_rel: comp.max(0.0) / scale,
        mu,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Converged,
    EarlyExit,
    MaxIters,
    Failure(String),
}

struct Run {
    x: DVector<f64>,
    z: Vec<DMatrix<f64>>,
    outcome: Outcome,
    iterations: usize,
    history: Vec<IterationRecord>,
    pobj: f64,
    dobj: f64,
    rd_rel: f64,
    gap_rel: f64,
    comp_rel: f64,
}

fn run(p: &Prepared, x0: DVector<f64>, z0: Vec<DMatrix<f64>>, opts: &SdpOptions, early: &dyn Fn(&DVector<f64>) -> bool) -> Run {
    let mut x = x0;
    let mut s: Vec<DMatrix<f64>> = p.blks.iter().map(|b| b.eval(&x)).collect();
    let mut z = z0;
    let mut history = Vec::new();
    let mut iter = 0;
    let fail = |x: DVector<f64>, z: Vec<DMatrix<f64>>, iter, history, msg: String| Run {
        x,
        z,
        outcome: Outcome::Failure(msg),
        iterations: iter,
        history,
        pobj: f64::NAN,
        dobj: f64::NAN,
        rd_rel: f64::NAN,
        gap_rel: f64::NAN,
        comp_rel: f64::NAN,
    };
    loop {
        let st = match stats(p, &x, &s, &z) {
            Some(st) => st,
            None => return fail(x, z, iter, history, "lost positive definiteness".into()),
        };
        let finish = |outcome, x, z, history| Run {
            x,
            z,
            outcome,
            iterations: iter,
            history,
            pobj: st.pobj,
            dobj: st.dobj,
            rd_rel: st.rd_rel,
            gap_rel: st.gap_rel,
            comp_rel: st.comp_rel,
        };
        if early(&x) {
            return finish(Outcome::EarlyExit, x, z, history);
        }
        if st.gap_rel <= opts.tol_gap && st.comp_rel <= opts.tol_gap && st.rd_rel <= opts.tol_feas {
            return finish(Outcome::Converged, x, z, history);
        }
        if iter >= opts.max_iters {
            return finish(Outcome::MaxIters, x, z, history);
        }
        iter += 1;

        let mut scaled = Vec::with_capacity(p.blks.len());
        for ((blk, sb), zb) in p.blks.iter().zip(&s).zip(&z) {
            match scale_block(blk, sb, zb) {
                Some(sc) => scaled.push(sc),
                None => return fail(x, z, iter, history, "scaling factorization failed".into()),
            }
        }
        let sys = match System::factor(p, &scaled) {
            Some(sys) => sys,
            None => return fail(x, z, iter, history, "Newton system is singular".into()),
        };

        // Predictor: affine-scaling direction (logdet blocks keep their
        // fixed centering target).
        let e_aff: Vec<DMatrix<f64>> = p
            .blks
            .iter()
            .zip(&scaled)
            .map(|(blk, sc)| {
                let t = blk.weight.unwrap_or(0.0);
                DMatrix::from_diagonal(&sc.lam.map(|l| t / l - l))
            })
            .collect();
        let (_, ds_a, dz_a) = sys.solve(p, &scaled, &e_aff, &st.rd);
        let (mut ap, mut ad) = (1.0_f64, 1.0_f64);
        for ((sc, ds), dz) in scaled.iter().zip(&ds_a).zip(&dz_a) {
            ap = ap.min(max_step(&sc.lam, ds));
            ad = ad.min(max_step(&sc.lam, dz));
        }
        let sigma = if p.nu > 0 && st.mu > 0.0 {
            let mut aff = 0.0;
            for (((blk, sc), ds), dz) in p.blks.iter().zip(&scaled).zip(&ds_a).zip(&dz_a) {
                if blk.weight.is_none() {
                    let lam = DMatrix::from_diagonal(&sc.lam);
                    aff += frob(&(&lam + ds * ap), &(&lam + dz * ad));
                }
            }
            let mu_aff = aff.max(0.0) / p.nu as f64;
            (mu_aff / st.mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector with the second-order term.
        let e: Vec<DMatrix<f64>> = p
            .blks
            .iter()
            .zip(&scaled)
            .zip(ds_a.iter().zip(&dz_a))
            .map(|((blk, sc), (ds, dz))| {
                let target = blk.weight.unwrap_or(sigma * st.mu);
                let k = sc.lam.len();
                let mut b = -sym_part(&(ds * dz));
                for i in 0..k {
                    b[(i, i)] += target - sc.lam[i] * sc.lam[i];
                }
                lyap_diag(&sc.lam, &b)
            })
            .collect();
        let (dx, ds, dz) = sys.solve(p, &scaled, &e, &st.rd);
        let (mut pmax, mut dmax) = (f64::INFINITY, f64::INFINITY);
        for ((sc, dsb), dzb) in scaled.iter().zip(&ds).zip(&dz) {
            pmax = pmax.min(max_step(&sc.lam, dsb));
            dmax = dmax.min(max_step(&sc.lam, dzb));
        }
        ap = (opts.step_fraction * pmax).min(1.0);
        ad = (opts.step_fraction * dmax).min(1.0);

        // Primal update, recomputing S = F(x) and backing off if a block
        // fails to factor.
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dx * ap;
            let sn: Vec<DMatrix<f64>> = p.blks.iter().map(|b| b.eval(&xn)).collect();
            if sn.iter().all(|m| m.clone().cholesky().is_some()) {
                accepted = Some((xn, sn));
                break;
            }
            ap *= 0.5;
        }
        let Some((xn, sn)) = accepted else {
            return fail(x, z, iter, history, "primal step collapsed".into());
        };
        x = xn;
        s = sn;
        z = scaled
            .iter()
            .zip(&dz)
            .map(|(sc, dzb)| {
                let inner = DMatrix::from_diagonal(&sc.lam) + dzb * ad;
                sym_part(&(sc.rinv.transpose() * inner * &sc.rinv))
            })
            .collect();
        history.push(IterationRecord {
            primal: st.pobj,
            dual: st.dobj,
            dual_infeasibility_term: st.rd_dot_x,
            mu: st.mu,
            step_primal: ap,
            step_dual: ad,
        });
        if ap < 1e-12 && ad < 1e-12 {
            return fail(x, z, iter, history, "step lengths vanished".into());
        }
    }
}

fn initial_dual(p: &Prepared, s: &[DMatrix<f64>]) -> Option<Vec<DMatrix<f64>>> {
    let inverses: Vec<DMatrix<f64>> = s
        .iter()
        .map(|m| m.clone().cholesky().map(|c| c.inverse()))
        .collect::<Option<_>>()?;
    let mut a: DVector<f64> = DVector::zeros(p.c.len());
    let mut c = p.c.clone();
    for (blk, inv) in p.blks.iter().zip(&inverses) {
        for (j, f) in blk.vars.iter().zip(&blk.mats) {
            let v = frob(f, inv);
            match blk.weight {
                None => a[*j] += v,
                Some(w) => c[*j] -= w * v,
            }
        }
    }
    // Z₀ = μ₀ S⁻¹ is perfectly centered; μ₀ is taken large enough that
    // every cost component is matched by the dual (an infeasible start
    // that is too small makes the first Newton steps wildly inaccurate).
    let amax: f64 = a.amax();
    let mut mu0 = 0.0_f64;
    for (aj, cj) in a.iter().zip(c.iter()) {
        if aj.abs() > 1e-12 * amax {
            mu0 = mu0.max(cj.abs() / aj.abs());
        }
    }
    if amax > 0.0 {
        mu0 = mu0.max(c.norm() / a.norm());
    }
    if !(mu0 > 0.0) || !mu0.is_finite() {
        mu0 = 1.0;
    }
    Some(
        p.blks
            .iter()
            .zip(inverses)
            .map(|(blk, inv)| inv * blk.weight.unwrap_or(mu0))
            .collect(),
    )
}

fn min_eigs(blocks: &[AffineBlock], x: &DVector<f64>) -> Vec<f64> {
    blocks.iter().map(|b| min_eigenvalue(&b.evaluate(x))).collect()
}

struct Reduced {
    blocks: Vec<AffineBlock>,
    c: DVector<f64>,
    offset: DVector<f64>,
    basis: DMatrix<f64>,
}

/// Nullspace elimination of `A x = b`: `x = x_p + N z`.
fn eliminate(problem: &SdpProblem) -> Result<core::result::Result<Reduced, f64>> {
    let eq = problem.equalities.as_ref().expect("called with equalities");
    let (xp, _) = lstsq_min_norm(&eq.a, &eq.b, 1e-12);
    let resid = (&eq.a * &xp - &eq.b).norm() / (1.0 + eq.b.norm());
    if resid > 1e-9 {
        return Ok(Err(resid));
    }
    let (_, basis) = row_and_null_space(&eq.a, 1e-12);
    let nz = basis.ncols();
    let mut blocks = Vec::with_capacity(problem.blocks.len());
    for b in &problem.blocks {
        let constant = b.evaluate(&xp);
        let k = b.size();
        let mut terms = Vec::with_capacity(nz);
        for col in 0..nz {
            let mut f = DMatrix::zeros(k, k);
            for (j, fj) in &b.terms {
                let w = basis[(*j, col)];
                if w != 0.0 {
                    f += fj * w;
                }
            }
            if f.iter().any(|v| v.abs() > 1e-14) {
                terms.push((col, f));
            }
        }
        let mut nb = AffineBlock::new(constant, terms)?;
        nb.kind = b.kind;
        blocks.push(nb);
    }
    Ok(Ok(Reduced {
        blocks,
        c: basis.transpose() * &problem.objective,
        offset: xp,
        basis,
    }))
}

fn empty_certificates(problem: &SdpProblem, x: &DVector<f64>) -> Certificates {
    Certificates {
        primal_residual: 0.0,
        dual_residual: f64::NAN,
        duality_gap: f64::NAN,
        complementarity: f64::NAN,
        min_block_eigenvalues: min_eigs(&problem.blocks, x),
    }
}

fn infeasible(problem: &SdpProblem, x: DVector<f64>, phase_one_iterations: usize, residual: f64) -> SdpSolution {
    SdpSolution {
        certificates: empty_certificates(problem, &x),
        objective_value: f64::NAN,
        dual_value: f64::NAN,
        x,
        status: SdpStatus::Infeasible,
        iterations: 0,
        phase_one_iterations,
        dual: Vec::new(),
        history: Vec::new(),
        message: format!("no strictly feasible point (phase-one value {residual:e})"),
    }
}

/// Solves the problem. Structural problems are errors; solver outcomes
/// (infeasible, iteration limit, numerical breakdown) are reported through
/// [`SdpSolution::status`].
pub fn solve(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    problem.validate()?;
    if let Some(x0) = &opts.initial {
        if x0.len() != problem.dim {
            return Err(Error::DimensionMismatch {
                what: "initial point",
                expected: problem.dim,
                got: x0.len(),
            });
        }
    }
    let reduced = match &problem.equalities {
        None => Reduced {
            blocks: problem.blocks.clone(),
            c: problem.objective.clone(),
            offset: DVector::zeros(problem.dim),
            basis: DMatrix::identity(problem.dim, problem.dim),
        },
        Some(_) => match eliminate(problem)? {
            Ok(r) => r,
            Err(resid) => {
                let x = DVector::zeros(problem.dim);
                let mut sol = infeasible(problem, x, 0, resid);
                sol.message = format!("inconsistent equality constraints (residual {resid:e})");
                return Ok(sol);
            }
        },
    };
    let nz = reduced.basis.ncols();
    // Directions along which every block is constant must carry no cost;
    // otherwise they are projected out so the Newton system stays regular.
    let (span, lineality) = coefficient_span(&reduced.blocks, nz);
    if lineality.ncols() > 0 {
        let drift = (lineality.transpose() * &reduced.c).amax();
        if drift > 1e-10 * (1.0 + reduced.c.norm()) {
            let x = reduced.offset.clone();
            let mut sol = infeasible(problem, x, 0, f64::NAN);
            sol.status = SdpStatus::NumericalFailure;
            sol.message = "objective is unbounded along an unconstrained direction".into();
            return Ok(sol);
        }
    }
    let (blocks, c) = match &span {
        None => (reduced.blocks.clone(), reduced.c.clone()),
        Some(s) => (
            reduced.blocks.iter().map(|b| restrict(b, s)).collect::<Result<Vec<_>>>()?,
            s.transpose() * &reduced.c,
        ),
    };
    let init = opts.initial.as_ref().map(|x0| {
        let z = reduced.basis.transpose() * (x0 - &reduced.offset);
        match &span {
            None => z,
            Some(s) => lstsq_min_norm(s, &z, 1e-12).0,
        }
    });
    let to_full = |w: &DVector<f64>| match &span {
        None => &reduced.offset + &reduced.basis * w,
        Some(s) => &reduced.offset + &reduced.basis * (s * w),
    };
    let mut sol = solve_inequality(problem, &blocks, &c, init, opts, to_full)?;
    if let Some(eq) = &problem.equalities {
        sol.certificates.primal_residual = (&eq.a * &sol.x - &eq.b).norm() / (1.0 + eq.b.norm());
        if sol.status == SdpStatus::Optimal && sol.certificates.primal_residual > opts.tol_feas {
            sol.status = SdpStatus::NumericalFailure;
            sol.message = "equality residual above tolerance".into();
        }
    }
    Ok(sol)
}

/// Dense coefficient maps above this many entries skip the rank check.
/// Large problems come from the estimators, where every slack owns a block
/// entry and the parameters enter the consistency blocks, so they are full
/// rank by construction.
const SPAN_CHECK_ENTRIES: usize = 1 << 21;

/// Splits the variable space by whether the blocks depend on it. Returns a
/// basis of the dependent part (`None` when that is everything) and of the
/// lineality space. Columns are normalized first so unit choices do not
/// decide the rank.
fn coefficient_span(blocks: &[AffineBlock], nz: usize) -> (Option<DMatrix<f64>>, DMatrix<f64>) {
    let rows: usize = blocks.iter().map(|b| b.size() * (b.size() + 1) / 2).sum();
    if rows.saturating_mul(nz) > SPAN_CHECK_ENTRIES {
        return (None, DMatrix::zeros(nz, 0));
    }
    let mut m = DMatrix::zeros(rows, nz);
    let mut offset = 0;
    // Upper triangles, off-diagonals weighted so column norms are Frobenius.
    for b in blocks {
        let k = b.size();
        for (j, f) in &b.terms {
            let mut r = offset;
            for col in 0..k {
                for row in 0..=col {
                    let w = if row == col { 1.0 } else { core::f64::consts::SQRT_2 };
                    m[(r, *j)] = w * f[(row, col)];
                    r += 1;
                }
            }
        }
        offset += k * (k + 1) / 2;
    }
    let scale: Vec<f64> = (0..nz)
        .map(|j| {
            let s = m.column(j).norm();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        m.column_mut(j).unscale_mut(*s);
    }
    let (row, null) = row_and_null_space(&m, 1e-10);
    if null.ncols() == 0 {
        return (None, null);
    }
    let unscale = |mut basis: DMatrix<f64>| {
        for (i, s) in scale.iter().enumerate() {
            basis.row_mut(i).unscale_mut(*s);
        }
        for mut col in basis.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col.unscale_mut(n);
            }
        }
        basis
    };
    let span = unscale(row);
    let lineality = unscale(null);
    (Some(span), lineality)
}

/// Rewrites a block in the coordinates `x = S w`.
fn restrict(b: &AffineBlock, s: &DMatrix<f64>) -> Result<AffineBlock> {
    let k = b.size();
    let mut terms = Vec::with_capacity(s.ncols());
    for col in 0..s.ncols() {
        let mut f = DMatrix::zeros(k, k);
        for (j, fj) in &b.terms {
            let w = s[(*j, col)];
            if w != 0.0 {
                f += fj * w;
            }
        }
        if f.iter().any(|v| v.abs() > 1e-14) {
            terms.push((col, f));
        }
    }
    let mut nb = AffineBlock::new(b.constant.clone(), terms)?;
    nb.kind = b.kind;
    Ok(nb)
}

fn solve_inequality(
    original: &SdpProblem,
    blocks: &[AffineBlock],
    c: &DVector<f64>,
    init: Option<DVector<f64>>,
    opts: &SdpOptions,
    to_full: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> Result<SdpSolution> {
    let dim = c.len();
    let x0 = init.unwrap_or_else(|| DVector::zeros(dim));
    let objective_of = |x: &DVector<f64>| original.objective_value(&to_full(x));

    if dim == 0 {
        let x = to_full(&x0);
        let eigs = min_eigs(&original.blocks, &x);
        let ok = eigs.iter().all(|e| *e >= -opts.tol_feas);
        return Ok(SdpSolution {
            objective_value: objective_of(&x0),
            dual_value: objective_of(&x0),
            status: if ok { SdpStatus::Optimal } else { SdpStatus::Infeasible },
            certificates: Certificates {
                primal_residual: 0.0,
                dual_residual: 0.0,
                duality_gap: 0.0,
                complementarity: 0.0,
                min_block_eigenvalues: eigs,
            },
            x,
            iterations: 0,
            phase_one_iterations: 0,
            dual: Vec::new(),
            history: Vec::new(),
            message: String::from("no free variables"),
        });
    }

    // Phase one when the start is not strictly feasible.
    let lo = blocks.iter().map(|b| min_eigenvalue(&b.evaluate(&x0))).fold(f64::INFINITY, f64::min);
    let mut phase_one_iterations = 0;
    let start = if lo > 0.0 && blocks.iter().all(|b| b.evaluate(&x0).cholesky().is_some()) {
        x0
    } else {
        let t_index = dim;
        let t0 = 1.0 + 1.1 * (-lo).max(0.0);
        let mut p1_blocks = Vec::with_capacity(blocks.len());
        for b in blocks {
            let mut terms = b.terms.clone();
            terms.push((t_index, DMatrix::identity(b.size(), b.size())));
            p1_blocks.push(AffineBlock {
                constant: b.constant.clone(),
                terms,
                kind: BlockKind::Cone,
            });
        }
        let mut e_t = DVector::zeros(dim + 1);
        e_t[t_index] = 1.0;
        let p1 = prepare(&p1_blocks, e_t);
        let mut y0 = DVector::zeros(dim + 1);
        y0.rows_mut(0, dim).copy_from(&x0);
        y0[t_index] = t0;
        let s0: Vec<DMatrix<f64>> = p1.blks.iter().map(|b| b.eval(&y0)).collect();
        let inv_trace: f64 = s0
            .iter()
            .map(|m| m.clone().cholesky().map(|c| c.inverse().trace()).unwrap_or(f64::NAN))
            .sum();
        if !inv_trace.is_finite() {
            return Err(Error::SolverFailure("phase-one start is not positive definite".into()));
        }
        let z0: Vec<DMatrix<f64>> = s0
            .iter()
            .map(|m| m.clone().cholesky().expect("checked").inverse() / inv_trace)
            .collect();
        let threshold = -1e-3 * t0;
        let p1_opts = SdpOptions {
            tol_gap: opts.tol_gap,
            tol_feas: opts.tol_feas,
            ..opts.clone()
        };
        let r = run(&p1, y0, z0, &p1_opts, &|y: &DVector<f64>| y[t_index] < threshold);
        phase_one_iterations = r.iterations;
        let t = r.x[t_index];
        let x = r.x.rows(0, dim).into_owned();
        match r.outcome {
            Outcome::EarlyExit => x,
            _ if t < 0.0 && blocks.iter().all(|b| b.evaluate(&x).cholesky().is_some()) => x,
            Outcome::Converged if t > opts.tol_feas => {
                return Ok(infeasible(original, to_full(&x), phase_one_iterations, t));
            }
            Outcome::Converged => {
                let mut sol = infeasible(original, to_full(&x), phase_one_iterations, t);
                sol.message = format!("feasible set has no interior (phase-one value {t:e})");
                return Ok(sol);
            }
            Outcome::MaxIters | Outcome::Failure(_) => {
                let msg = match r.outcome {
                    Outcome::Failure(m) => m,
                    _ => "iteration limit".into(),
                };
                let xf = to_full(&x);
                return Ok(SdpSolution {
                    certificates: empty_certificates(original, &xf),
                    objective_value: f64::NAN,
                    dual_value: f64::NAN,
                    x: xf,
                    status: SdpStatus::NumericalFailure,
                    iterations: 0,
                    phase_one_iterations,
                    dual: Vec::new(),
                    history: Vec::new(),
                    message: format!("phase one failed: {msg}"),
                });
            }
        }
    };

    let p = prepare(blocks, c.clone());
    let s0: Vec<DMatrix<f64>> = p.blks.iter().map(|b| b.eval(&start)).collect();
    let z0 = initial_dual(&p, &s0).ok_or_else(|| Error::SolverFailure("phase-two start is not positive definite".into()))?;
    let r = run(&p, start, z0, opts, &|_| false);
    let x = to_full(&r.x);
    let (status, message) = match &r.outcome {
        Outcome::Converged => (SdpStatus::Optimal, String::from("converged")),
        Outcome::MaxIters => (SdpStatus::MaxIters, String::from("iteration limit reached")),
        Outcome::Failure(m) => (SdpStatus::NumericalFailure, m.clone()),
        Outcome::EarlyExit => unreachable!("phase two has no early exit"),
    };
    let offset_obj = original.objective_value(&x) - r.pobj;
    Ok(SdpSolution {
        objective_value: original.objective_value(&x),
        dual_value: r.dobj + offset_obj,
        status,
        certificates: Certificates {
            primal_residual: 0.0,
            dual_residual: r.rd_rel,
            duality_gap: r.gap_rel,
            complementarity: r.comp_rel,
            min_block_eigenvalues: min_eigs(&original.blocks, &x),
        },
        x,
        iterations: r.iterations,
        phase_one_iterations,
        dual: r.z,
        history: r.history,
        message,
    })
}
