//! Dense symmetric-matrix helpers and the dual-metric geometry.
//!
//! The metric `M` measures generalized velocities; generalized forces are
//! covectors and are measured by the dual metric `M⁻¹`. Everything here
//! works on small dense matrices (n ≤ 10).

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::error::{Error, Result};

/// Relative asymmetry above which a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Ratio `λ_min / λ_max` below which a metric is treated as singular.
pub const SINGULAR_RATIO: f64 = 1e-8;

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Returns `(A + Aᵀ)/2`, rejecting inputs whose asymmetry exceeds
/// [`SYMMETRY_TOL`] relative to `max(1, max|A|)`.
pub fn symmetrize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let scale = max_abs(a).max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric(asym));
    }
    Ok(sym_part(a))
}

/// `(A + Aᵀ)/2` without checks.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Sorted eigenvalues (ascending) of a symmetric matrix.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut ev: alloc::vec::Vec<f64> = sym_part(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    DVector::from_vec(ev)
}

/// Smallest eigenvalue of a symmetric matrix (`+∞` for an empty matrix).
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    sym_eigenvalues(a)[0]
}

/// Checks the singularity guard `λ_min > SINGULAR_RATIO · λ_max` and returns
/// the extreme eigenvalues.
pub fn check_metric(metric: &DMatrix<f64>) -> Result<(f64, f64)> {
    let m = symmetrize(metric)?;
    let ev = sym_eigenvalues(&m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(hi > 0.0) || !(lo > SINGULAR_RATIO * hi) {
        return Err(Error::SingularMetric {
            min_eig: lo,
            max_eig: hi,
        });
    }
    Ok((lo, hi))
}

/// Squared dual norm `fᵀ M⁻¹ f` of a covector, computed with a Cholesky
/// solve.
pub fn dual_norm_sq(metric: &DMatrix<f64>, f: &DVector<f64>) -> Result<f64> {
    if metric.nrows() != f.len() {
        return Err(Error::DimensionMismatch {
            what: "covector",
            expected: metric.nrows(),
            got: f.len(),
        });
    }
    let (lo, hi) = check_metric(metric)?;
    let chol = sym_part(metric).cholesky().ok_or(Error::SingularMetric {
        min_eig: lo,
        max_eig: hi,
    })?;
    // ‖L⁻¹ f‖² with M = L Lᵀ.
    let mut y = f.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut y);
    Ok(y.norm_squared())
}

/// Symmetric positive-definite square root `M^{1/2}`.
pub fn metric_sqrt(metric: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_metric(metric)?;
    Ok(psd_sqrt(&sym_part(metric)))
}

/// Square root of a symmetric PSD matrix; negative round-off eigenvalues
/// are clipped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_part(a).symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Numerical rank of a matrix using the relative singular-value threshold
/// `rel_tol · σ_max`.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Orthonormal bases `(row space, null space)` of `a`, both as columns of
/// `ncols × k` matrices.
pub fn row_and_null_space(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.ncols();
    if a.nrows() == 0 {
        return (DMatrix::zeros(d, 0), DMatrix::identity(d, d));
    }
    // Pad to at least d rows so that the SVD returns a full right basis.
    let padded = if a.nrows() < d {
        let mut p = DMatrix::zeros(d, d);
        p.rows_mut(0, a.nrows()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let sv = &svd.singular_values;
    let smax = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut row = alloc::vec::Vec::new();
    let mut null = alloc::vec::Vec::new();
    for (i, s) in sv.iter().enumerate() {
        let v = vt.row(i).transpose();
        if smax > 0.0 && *s > rel_tol * smax {
            row.push(v);
        } else {
            null.push(v);
        }
    }
    let to_mat = |cols: &[DVector<f64>]| {
        if cols.is_empty() {
            DMatrix::zeros(d, 0)
        } else {
            DMatrix::from_columns(cols)
        }
    };
    (to_mat(&row), to_mat(&null))
}

/// Minimum-norm least-squares solution of `A x ≈ b` via SVD with the
/// relative threshold `rel_tol`. Returns `(x, rank)`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, usize) {
    let d = a.ncols();
    if a.nrows() == 0 || d == 0 {
        return (DVector::zeros(d), 0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, v| m.max(*v));
    let eps = (rel_tol * smax).max(f64::MIN_POSITIVE);
    let r = svd.singular_values.iter().filter(|s| **s > eps).count();
    let x = svd.solve(b, eps).expect("U and V were requested");
    (x, r)
}

/// Compresses a tall least-squares system to `(R, y, c)` with
/// `‖A x − b‖² = ‖R x − y‖² + c` and `R` square upper triangular.
pub fn compress_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
    let d = a.ncols();
    if a.nrows() < d {
        // Nothing to compress; pad with zero rows.
        let mut r = DMatrix::zeros(d, d);
        r.rows_mut(0, a.nrows()).copy_from(a);
        let mut y = DVector::zeros(d);
        y.rows_mut(0, a.nrows()).copy_from(b);
        return (r, y, 0.0);
    }
    let qr = a.clone().qr();
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let y = qtb.rows(0, d).into_owned();
    let rest = if qtb.len() > d {
        qtb.rows(d, qtb.len() - d).norm_squared()
    } else {
        0.0
    };
    (r, y, rest)
}
