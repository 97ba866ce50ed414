//! Linear-objective semidefinite programs with many small affine blocks.
//!
//! Inequality form: minimize `cᵀx` subject to `F_b(x) = F_b0 + Σⱼ xⱼ F_bj ⪰ 0`
//! for every block `b`, plus optional equalities `A x = b`. Blocks store only
//! the variables that actually enter them, which is what makes problems
//! with thousands of per-sample Schur blocks cheap: a variable that appears
//! in a single block is eliminated inside that block before the dense
//! Newton system is formed.
//!
//! A block may instead be a log-determinant term, adding `−w·logdet F_b(x)`
//! to the objective (its domain is still `F_b(x) ≻ 0`). The solver handles
//! these exactly with a fixed centering target.

mod ipm;
mod text;

#[cfg(test)]
mod tests;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt, sym_eigenvalues, symmetrize};

pub use ipm::solve;
pub use text::{from_triplets, to_triplets};

/// How a block enters the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BlockKind {
    /// Plain constraint `F(x) ⪰ 0`.
    Cone,
    /// Objective term `−weight · logdet F(x)` with domain `F(x) ≻ 0`.
    LogDet { weight: f64 },
}

/// One affine symmetric block `F₀ + Σ xⱼ Fⱼ` with sparse variable support.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub constant: DMatrix<f64>,
    /// `(variable index, coefficient)`, sorted by index without repeats.
    pub terms: Vec<(usize, DMatrix<f64>)>,
    pub kind: BlockKind,
}

impl AffineBlock {
    /// Builds a cone block; symmetrizes every matrix, merges repeated
    /// variable indices and drops zero coefficients.
    pub fn new(constant: DMatrix<f64>, terms: Vec<(usize, DMatrix<f64>)>) -> Result<Self> {
        let k = constant.nrows();
        let constant = symmetrize(&constant)?;
        let mut merged: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(terms.len());
        let mut terms = terms;
        terms.sort_by_key(|(j, _)| *j);
        for (j, f) in terms {
            if f.nrows() != k || f.ncols() != k {
                return Err(Error::DimensionMismatch {
                    what: "block coefficient",
                    expected: k,
                    got: f.nrows(),
                });
            }
            let f = symmetrize(&f)?;
            if f.iter().all(|v| *v == 0.0) {
                continue;
            }
            match merged.last_mut() {
                Some((last, acc)) if *last == j => *acc += f,
                _ => merged.push((j, f)),
            }
        }
        Ok(Self {
            constant,
            terms: merged,
            kind: BlockKind::Cone,
        })
    }

    /// Dense form: one coefficient per decision variable, zero matrices
    /// dropped.
    pub fn dense(constant: DMatrix<f64>, coeffs: &[DMatrix<f64>]) -> Result<Self> {
        let terms = coeffs
            .iter()
            .enumerate()
            .filter(|(_, f)| f.iter().any(|v| *v != 0.0))
            .map(|(j, f)| (j, f.clone()))
            .collect();
        Self::new(constant, terms)
    }

    /// Log-determinant objective block.
    pub fn logdet(constant: DMatrix<f64>, terms: Vec<(usize, DMatrix<f64>)>, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::MalformedProblem(format!("logdet weight must be positive, got {weight}")));
        }
        let mut b = Self::new(constant, terms)?;
        b.kind = BlockKind::LogDet { weight };
        Ok(b)
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (j, f) in &self.terms {
            let v = x[*j];
            if v != 0.0 {
                m += f * v;
            }
        }
        m
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.last().map(|(j, _)| *j)
    }
}

/// Equality constraints `A x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalities {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub dim: usize,
    pub objective: DVector<f64>,
    pub blocks: Vec<AffineBlock>,
    pub equalities: Option<Equalities>,
}

impl SdpProblem {
    pub fn new(objective: DVector<f64>, blocks: Vec<AffineBlock>) -> Result<Self> {
        let p = Self {
            dim: objective.len(),
            objective,
            blocks,
            equalities: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        self.equalities = Some(Equalities { a, b });
        self.validate()?;
        Ok(self)
    }

    /// Structural checks: at least one block, consistent sizes, symmetric
    /// matrices, variable indices in range, every variable used by some
    /// block.
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "objective",
                expected: self.dim,
                got: self.objective.len(),
            });
        }
        if self.blocks.is_empty() {
            return Err(Error::MalformedProblem("problem has no blocks".into()));
        }
        let mut used = alloc::vec![false; self.dim];
        for (b, blk) in self.blocks.iter().enumerate() {
            let k = blk.size();
            if k == 0 || blk.constant.ncols() != k {
                return Err(Error::MalformedProblem(format!("block {b} is empty or not square")));
            }
            symmetrize(&blk.constant)?;
            if let Some(j) = blk.max_var() {
                if j >= self.dim {
                    return Err(Error::MalformedProblem(format!(
                        "block {b} references variable {j} of {}",
                        self.dim
                    )));
                }
            }
            for w in blk.terms.windows(2) {
                if w[0].0 >= w[1].0 {
                    return Err(Error::MalformedProblem(format!("block {b} terms are not sorted and unique")));
                }
            }
            for (j, f) in &blk.terms {
                if f.nrows() != k || f.ncols() != k {
                    return Err(Error::MalformedProblem(format!("block {b} coefficient {j} has wrong size")));
                }
                symmetrize(f)?;
                used[*j] = true;
            }
            if let BlockKind::LogDet { weight } = blk.kind {
                if !(weight > 0.0) || !weight.is_finite() {
                    return Err(Error::MalformedProblem(format!("block {b} has logdet weight {weight}")));
                }
            }
        }
        if let Some(eq) = &self.equalities {
            if eq.a.ncols() != self.dim || eq.a.nrows() != eq.b.len() {
                return Err(Error::MalformedProblem("equality constraint dimensions".into()));
            }
        }
        if let Some(j) = used.iter().position(|u| !*u) {
            return Err(Error::MalformedProblem(format!("variable {j} appears in no block")));
        }
        Ok(())
    }

    /// Objective at `x`, including log-determinant terms (`+∞` outside
    /// their domain).
    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.objective.dot(x);
        for blk in &self.blocks {
            if let BlockKind::LogDet { weight } = blk.kind {
                match blk.evaluate(x).cholesky() {
                    Some(ch) => v -= weight * 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
                    None => return f64::INFINITY,
                }
            }
        }
        v
    }
}

/// Solver tolerances and start policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpOptions {
    /// Relative duality gap at termination.
    pub tol_gap: f64,
    /// Relative dual residual (and equality residual) at termination.
    pub tol_feas: f64,
    pub max_iters: usize,
    /// Fraction-to-boundary factor.
    pub step_fraction: f64,
    /// Starting point. Used directly when strictly feasible, otherwise as
    /// the start of the phase-one search. `None` starts from zero.
    pub initial: Option<DVector<f64>>,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iters: 200,
            step_fraction: 0.98,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIters,
    NumericalFailure,
}

/// Optimality certificates of the returned iterate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificates {
    /// `‖A x − b‖ / (1 + ‖b‖)`; zero without equalities.
    pub primal_residual: f64,
    /// `‖c − A*(Z)‖ / (1 + ‖c‖)`.
    pub dual_residual: f64,
    /// `|primal − dual| / max(1, |primal|)`.
    pub duality_gap: f64,
    /// Per-block complementarity (`tr(S Z)` for cones) summed, relative to
    /// `max(1, |primal|)`.
    pub complementarity: f64,
    pub min_block_eigenvalues: Vec<f64>,
}

/// One interior-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub primal: f64,
    pub dual: f64,
    /// `xᵀ (c − A*(Z))`, the amount by which dual infeasibility can offset
    /// weak duality.
    pub dual_infeasibility_term: f64,
    pub mu: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    pub objective_value: f64,
    pub dual_value: f64,
    pub status: SdpStatus,
    pub certificates: Certificates,
    /// Phase-two iterations (phase one is counted separately).
    pub iterations: usize,
    pub phase_one_iterations: usize,
    /// Dual matrices, one per block.
    pub dual: Vec<DMatrix<f64>>,
    pub history: Vec<IterationRecord>,
    pub message: String,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// Per-block feasibility report.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub min_eig_per_block: Vec<f64>,
}

/// Exact eigenvalue check of every block at `x`.
pub fn feasible(problem: &SdpProblem, x: &DVector<f64>, tol_feas: f64) -> Result<FeasibilityReport> {
    if x.len() != problem.dim {
        return Err(Error::DimensionMismatch {
            what: "decision vector",
            expected: problem.dim,
            got: x.len(),
        });
    }
    let min_eig_per_block: Vec<f64> = problem.blocks.iter().map(|b| min_eigenvalue(&b.evaluate(x))).collect();
    let eq_ok = match &problem.equalities {
        Some(eq) => (&eq.a * x - &eq.b).norm() <= tol_feas * (1.0 + eq.b.norm()),
        None => true,
    };
    Ok(FeasibilityReport {
        feasible: eq_ok && min_eig_per_block.iter().all(|e| *e >= -tol_feas),
        min_eig_per_block,
    })
}

/// Epigraph block `[[I, A x − b], [(A x − b)ᵀ, x_epi]] ⪰ 0`, i.e.
/// `‖A x − b‖² ≤ x_epi`. `vars[j]` is the problem index of column `j` of `A`.
pub fn least_squares_block(a: &DMatrix<f64>, b: &DVector<f64>, vars: &[usize], epi: usize) -> Result<AffineBlock> {
    let r = a.nrows();
    if a.ncols() != vars.len() || b.len() != r {
        return Err(Error::DimensionMismatch {
            what: "least-squares block",
            expected: a.ncols(),
            got: vars.len(),
        });
    }
    let k = r + 1;
    let mut constant = DMatrix::identity(k, k);
    constant[(r, r)] = 0.0;
    for i in 0..r {
        constant[(i, r)] = -b[i];
        constant[(r, i)] = -b[i];
    }
    let mut terms = Vec::with_capacity(vars.len() + 1);
    for (col, &j) in vars.iter().enumerate() {
        let mut f = DMatrix::zeros(k, k);
        for i in 0..r {
            f[(i, r)] = a[(i, col)];
            f[(r, i)] = a[(i, col)];
        }
        terms.push((j, f));
    }
    let mut f = DMatrix::zeros(k, k);
    f[(r, r)] = 1.0;
    terms.push((epi, f));
    AffineBlock::new(constant, terms)
}

/// Embeds `min ½ xᵀQx + cᵀx` subject to affine blocks as an SDP over
/// `(x, t)` with the epigraph `[[I, L x], [(L x)ᵀ, t]] ⪰ 0`, `Q = LᵀL`, and
/// objective `½ t + cᵀx`. The last variable is `t`.
pub fn qp_as_sdp(q: &DMatrix<f64>, c: &DVector<f64>, blocks: Vec<AffineBlock>) -> Result<SdpProblem> {
    let m = c.len();
    if q.nrows() != m || q.ncols() != m {
        return Err(Error::DimensionMismatch {
            what: "quadratic term",
            expected: m,
            got: q.nrows(),
        });
    }
    let q = symmetrize(q)?;
    let ev = sym_eigenvalues(&q);
    let scale = ev.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    if m > 0 && ev[0] < -1e-10 * scale {
        return Err(Error::NotPsd(ev[0]));
    }
    // Q = LᵀL with L = Q^{1/2}; rows of zero singular value are kept so the
    // block has a fixed shape.
    let l = psd_sqrt(&q);
    let mut objective = DVector::zeros(m + 1);
    objective.rows_mut(0, m).copy_from(c);
    objective[m] = 0.5;
    let vars: Vec<usize> = (0..m).collect();
    let mut all = blocks;
    all.push(least_squares_block(&l, &DVector::zeros(m), &vars, m)?);
    SdpProblem::new(objective, all)
}
