//! The identification objectives: OLS, covariance-weighted LS, energy-rate
//! LS, dual-metric LS and two geometrically regularized WLS variants.
//!
//! All of them work on a shared [`Regression`] and reduce to the SDP
//! solver when constraints or non-quadratic terms are involved.

mod objective;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::{check_metric, compress_least_squares, dual_norm_sq, lstsq_min_norm, rank, symmetrize};
use crate::model::{
    invert_chart, AffineMetric, ConsistencyConstraint, ConstraintKind, Dataset, DynamicParams, Model, ModelClass,
    ParamLayout, RegressorRow,
};
use crate::sdp::{Certificates, SdpOptions, SdpStatus};

use objective::{BregmanBlock, Objective, Setup, Term};
pub use objective::FLAT_TOL;

/// Per-sample regression data aligned with a dataset.
#[derive(Debug, Clone)]
pub struct Regression {
    pub layout: ParamLayout,
    /// The model the rows were built from, when there is one.
    pub model: Option<Model>,
    pub rows: Vec<RegressorRow>,
    pub taus: Vec<DVector<f64>>,
    pub configurations: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    /// Affine metric per sample, when the model class defines one.
    pub metrics: Option<Vec<AffineMetric>>,
    pub constraints: Vec<ConsistencyConstraint>,
    /// Dataset indices of the samples kept.
    pub kept: Vec<usize>,
    /// Dataset indices rejected by the singularity guard.
    pub excluded: Vec<usize>,
    /// Rank of the stacked regressor.
    pub rank: usize,
    /// A physically valid parameter vector used to center boxes on flat
    /// directions and to warm-start the solver.
    pub reference: DVector<f64>,
}

impl Regression {
    /// Builds the regression of `data` under `model` (both in the same
    /// chart). Samples whose metric fails the singularity guard in the
    /// mechanism's physical chart are excluded, so the kept set does not
    /// depend on the chart. Drag models get metric-positivity probes at
    /// every kept configuration.
    pub fn new(model: &Model, data: &Dataset) -> Result<Self> {
        data.validate()?;
        if data.n != model.dof() {
            return Err(Error::DimensionMismatch {
                what: "dataset dimension",
                expected: model.dof(),
                got: data.n,
            });
        }
        let reference = model.mechanics().reference_params();
        let mut rows = Vec::new();
        let mut taus = Vec::new();
        let mut configurations = Vec::new();
        let mut velocities = Vec::new();
        let mut metrics = Vec::new();
        let mut kept = Vec::new();
        let mut excluded = Vec::new();
        for (i, s) in data.samples.iter().enumerate() {
            let row = model.build_regressor(s)?;
            if check_metric(&model.physical_metric(&s.q, &reference)?).is_err() {
                excluded.push(i);
                continue;
            }
            rows.push(row);
            taus.push(s.tau.clone());
            configurations.push(s.q.clone());
            velocities.push(s.qd.clone());
            metrics.push(model.build_affine_metric(&s.q)?);
            kept.push(i);
        }
        if rows.is_empty() {
            return Err(Error::InvalidDataset("every sample was rejected by the singularity guard".into()));
        }
        let probes: &[DVector<f64>] = if model.class() == ModelClass::DragDominated { &configurations } else { &[] };
        let constraints = model.consistency_constraints(probes)?;
        let mut reg = Self {
            layout: model.layout(),
            model: Some(model.clone()),
            rows,
            taus,
            configurations,
            velocities,
            metrics: Some(metrics),
            constraints,
            kept,
            excluded,
            rank: 0,
            reference,
        };
        reg.rank = reg.stacked_rank();
        Ok(reg)
    }

    /// Regression from raw per-sample data; `rows` may be empty only for
    /// prior-only fits.
    pub fn from_parts(
        layout: ParamLayout,
        rows: Vec<RegressorRow>,
        taus: Vec<DVector<f64>>,
        velocities: Vec<DVector<f64>>,
        metrics: Option<Vec<AffineMetric>>,
        constraints: Vec<ConsistencyConstraint>,
        reference: DVector<f64>,
    ) -> Result<Self> {
        let d = layout.len();
        let count = rows.len();
        if taus.len() != count || velocities.len() != count || metrics.as_ref().is_some_and(|m| m.len() != count) {
            return Err(Error::InvalidDataset("per-sample lists differ in length".into()));
        }
        if reference.len() != d {
            return Err(Error::DimensionMismatch {
                what: "reference parameters",
                expected: d,
                got: reference.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            let n = taus[i].len();
            if row.y.ncols() != d || row.y.nrows() != n || velocities[i].len() != n {
                return Err(Error::DimensionMismatch {
                    what: "regressor row",
                    expected: d,
                    got: row.y.ncols(),
                });
            }
            if let Some(m) = &metrics {
                if m[i].size() != n || m[i].num_params() != d {
                    return Err(Error::DimensionMismatch {
                        what: "affine metric",
                        expected: n,
                        got: m[i].size(),
                    });
                }
            }
        }
        let mut reg = Self {
            layout,
            model: None,
            configurations: velocities.iter().map(|v| DVector::zeros(v.len())).collect(),
            rows,
            taus,
            velocities,
            metrics,
            constraints,
            kept: (0..count).collect(),
            excluded: Vec::new(),
            rank: 0,
            reference,
        };
        reg.rank = reg.stacked_rank();
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    /// Coordinate dimension (0 for an empty regression).
    pub fn dof(&self) -> usize {
        self.taus.first().map(|t| t.len()).unwrap_or(0)
    }

    /// Stacked regressor and forces.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dof();
        let d = self.num_params();
        let mut a = DMatrix::zeros(self.len() * n, d);
        let mut b = DVector::zeros(self.len() * n);
        for (i, (row, tau)) in self.rows.iter().zip(&self.taus).enumerate() {
            a.view_mut((i * n, 0), (n, d)).copy_from(&row.y);
            b.rows_mut(i * n, n).copy_from(tau);
        }
        (a, b)
    }

    fn stacked_rank(&self) -> usize {
        let (a, b) = self.stacked();
        rank(&compress_least_squares(&a, &b).0, FLAT_TOL)
    }

    /// The same regression after the linear chart map `q' = D q`:
    /// `Y' = D⁻ᵀ Y`, `τ' = D⁻ᵀ τ`, `q̇' = D q̇`, `M' = D⁻ᵀ M D⁻¹`.
    pub fn transform(&self, d: &DMatrix<f64>) -> Result<Regression> {
        let n = self.dof();
        if d.nrows() != n || d.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "chart map",
                expected: n,
                got: d.nrows(),
            });
        }
        let dinv = invert_chart(d)?;
        let dinv_t = dinv.transpose();
        let mut out = self.clone();
        out.model = match &self.model {
            Some(m) => Some(m.rechart(d)?),
            None => None,
        };
        for row in &mut out.rows {
            row.y = &dinv_t * &row.y;
        }
        for tau in &mut out.taus {
            *tau = &dinv_t * &*tau;
        }
        for q in &mut out.configurations {
            *q = d * &*q;
        }
        for v in &mut out.velocities {
            *v = d * &*v;
        }
        if let Some(ms) = &mut out.metrics {
            for m in ms.iter_mut() {
                *m = m.congruence(&dinv);
            }
        }
        for c in &mut out.constraints {
            if c.kind == ConstraintKind::ProbeMetric {
                c.form = c.form.congruence(&dinv);
            }
        }
        out.rank = out.stacked_rank();
        Ok(out)
    }

    /// Regression restricted to the given positions (into `rows`).
    pub fn subset(&self, positions: &[usize]) -> Result<Regression> {
        let mut out = self.clone();
        let pick = |v: &Vec<DVector<f64>>| positions.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        if positions.iter().any(|&i| i >= self.len()) {
            return Err(Error::InvalidDataset("subset index out of range".into()));
        }
        out.rows = positions.iter().map(|&i| self.rows[i].clone()).collect();
        out.taus = pick(&self.taus);
        out.configurations = pick(&self.configurations);
        out.velocities = pick(&self.velocities);
        out.metrics = self.metrics.as_ref().map(|m| positions.iter().map(|&i| m[i].clone()).collect());
        out.kept = positions.iter().map(|&i| self.kept[i]).collect();
        out.rank = out.stacked_rank();
        Ok(out)
    }
}

/// The six objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EstimatorKind {
    Ols,
    Wls,
    EnergyLs,
    DualMetric,
    RegBregman,
    RegPullback,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Ols,
        EstimatorKind::Wls,
        EstimatorKind::EnergyLs,
        EstimatorKind::DualMetric,
        EstimatorKind::RegBregman,
        EstimatorKind::RegPullback,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::Wls => "wls",
            EstimatorKind::EnergyLs => "energy",
            EstimatorKind::DualMetric => "dm",
            EstimatorKind::RegBregman => "bregman",
            EstimatorKind::RegPullback => "pullback",
        }
    }

    pub fn parse(name: &str) -> Option<EstimatorKind> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Residual weighting for WLS.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightPolicy {
    /// A fixed positive-definite `n × n` weight.
    Fixed(DMatrix<f64>),
    /// Inverse of the residual covariance of a first OLS pass.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// WLS weighting; `None` means automatic.
    pub weight: Option<WeightPolicy>,
    /// Regularization scale; `None` picks the default balance rule.
    pub rho: Option<f64>,
    /// Nominal parameters for the regularized variants.
    pub nominal: Option<DynamicParams>,
    pub enforce_consistency: bool,
    pub solver: SdpOptions,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            weight: None,
            rho: None,
            nominal: None,
            enforce_consistency: false,
            solver: SdpOptions::default(),
        }
    }

    pub fn constrained(mut self, on: bool) -> Self {
        self.enforce_consistency = on;
        self
    }

    pub fn with_nominal(mut self, nominal: DynamicParams) -> Self {
        self.nominal = Some(nominal);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    pub fn with_weight(mut self, weight: WeightPolicy) -> Self {
        self.weight = Some(weight);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, EstimatorKind::RegBregman | EstimatorKind::RegPullback) {
            if self.nominal.is_none() {
                return Err(Error::InvalidSpec("regularized estimators need nominal parameters".into()));
            }
            if let Some(rho) = self.rho {
                if !(rho > 0.0) || !rho.is_finite() {
                    return Err(Error::InvalidSpec(format!("rho must be positive, got {rho}")));
                }
            }
        }
        Ok(())
    }
}

/// Solver diagnostics attached to a report.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverSummary {
    pub status: SdpStatus,
    pub iterations: usize,
    pub phase_one_iterations: usize,
    pub certificates: Certificates,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorReport {
    pub kind: EstimatorKind,
    pub pi_hat: DynamicParams,
    pub objective: f64,
    /// `None` when the fit was solved in closed form.
    pub solver: Option<SolverSummary>,
    /// Residual covariance behind an automatic weight.
    pub sigma_hat: Option<DMatrix<f64>>,
    pub weight: Option<DMatrix<f64>>,
    pub rho: Option<f64>,
    /// Each sample's contribution to the data term.
    pub per_sample_weighted_residuals: Vec<f64>,
    /// Rank of the system the data term sees.
    pub rank: usize,
    /// Directions of parameter space the whole objective ignores.
    pub flat_directions: usize,
    /// Largest `|sᵢ − rᵢᵀ Mᵢ⁻¹ rᵢ| / max(1, sᵢ)` over the SDP's slacks.
    pub schur_tightness: Option<f64>,
    /// Whether a Newton polish refined the SDP iterate.
    pub polished: bool,
    pub warnings: Vec<String>,
}

impl EstimatorReport {
    /// Optimal, or solved in closed form.
    pub fn is_optimal(&self) -> bool {
        self.solver.as_ref().map(|s| s.status == SdpStatus::Optimal).unwrap_or(true)
    }
}

/// Runs the estimator described by `spec`.
pub fn fit(reg: &Regression, spec: &EstimatorSpec) -> Result<EstimatorReport> {
    spec.validate()?;
    match spec.kind {
        EstimatorKind::Ols => fit_ols_with(reg, spec.enforce_consistency, &spec.solver),
        EstimatorKind::Wls => fit_wls_with(reg, spec.weight.as_ref().unwrap_or(&WeightPolicy::Auto), spec.enforce_consistency, &spec.solver),
        EstimatorKind::EnergyLs => fit_energy_with(reg, spec.enforce_consistency, &spec.solver),
        EstimatorKind::DualMetric => fit_dual_metric_with(reg, spec.enforce_consistency, &spec.solver),
        EstimatorKind::RegBregman | EstimatorKind::RegPullback => {
            let nominal = spec.nominal.as_ref().ok_or_else(|| Error::InvalidSpec("missing nominal".into()))?;
            fit_regularized_with(reg, spec.kind, spec.rho, nominal, spec.enforce_consistency, &spec.solver)
        }
    }
}

pub fn fit_ols(reg: &Regression, enforce_consistency: bool) -> Result<EstimatorReport> {
    fit_ols_with(reg, enforce_consistency, &SdpOptions::default())
}

pub fn fit_wls(reg: &Regression, policy: &WeightPolicy, enforce_consistency: bool) -> Result<EstimatorReport> {
    fit_wls_with(reg, policy, enforce_consistency, &SdpOptions::default())
}

pub fn fit_energy(reg: &Regression, enforce_consistency: bool) -> Result<EstimatorReport> {
    fit_energy_with(reg, enforce_consistency, &SdpOptions::default())
}

pub fn fit_dual_metric(reg: &Regression, enforce_consistency: bool) -> Result<EstimatorReport> {
    fit_dual_metric_with(reg, enforce_consistency, &SdpOptions::default())
}

pub fn fit_regularized(
    reg: &Regression,
    kind: EstimatorKind,
    rho: Option<f64>,
    nominal: &DynamicParams,
    enforce_consistency: bool,
) -> Result<EstimatorReport> {
    fit_regularized_with(reg, kind, rho, nominal, enforce_consistency, &SdpOptions::default())
}

/// A whitened least-squares system: rows `Lᵀ Yᵢ`, targets `Lᵀ τᵢ`.
struct Weighted {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Rows of `a` per sample.
    per: usize,
}

fn whiten(reg: &Regression, factor: Option<&DMatrix<f64>>) -> Weighted {
    let (a, b) = reg.stacked();
    let n = reg.dof();
    match factor {
        None => Weighted { a, b, per: n },
        Some(lt) => {
            let d = reg.num_params();
            let mut wa = DMatrix::zeros(a.nrows(), d);
            let mut wb = DVector::zeros(b.len());
            for i in 0..reg.len() {
                wa.view_mut((i * n, 0), (n, d)).copy_from(&(lt * a.view((i * n, 0), (n, d))));
                wb.rows_mut(i * n, n).copy_from(&(lt * b.rows(i * n, n)));
            }
            Weighted { a: wa, b: wb, per: n }
        }
    }
}

fn energy_system(reg: &Regression) -> Weighted {
    let d = reg.num_params();
    let mut a = DMatrix::zeros(reg.len(), d);
    let mut b = DVector::zeros(reg.len());
    for (i, ((row, tau), qd)) in reg.rows.iter().zip(&reg.taus).zip(&reg.velocities).enumerate() {
        a.row_mut(i).copy_from(&(qd.transpose() * &row.y));
        b[i] = qd.dot(tau);
    }
    Weighted { a, b, per: 1 }
}

fn per_sample_squares(w: &Weighted, pi: &DVector<f64>, count: usize) -> Vec<f64> {
    let r = &w.a * pi - &w.b;
    (0..count).map(|i| r.rows(i * w.per, w.per).norm_squared()).collect()
}

fn params(reg: &Regression, values: DVector<f64>) -> Result<DynamicParams> {
    DynamicParams::new(values, reg.layout.clone())
}

fn summary(sol: &crate::sdp::SdpSolution) -> SolverSummary {
    SolverSummary {
        status: sol.status,
        iterations: sol.iterations,
        phase_one_iterations: sol.phase_one_iterations,
        certificates: sol.certificates.clone(),
        message: sol.message.clone(),
    }
}

fn box_halfwidth(reg: &Regression, extra: &[&DVector<f64>]) -> f64 {
    let mut scale = reg.reference.norm().max(1.0);
    for v in extra {
        scale = scale.max(v.norm());
    }
    10.0 * scale
}

fn setup<'c>(reg: &'c Regression, enforce: bool, reference: DVector<f64>, options: &SdpOptions, extra: &[&DVector<f64>]) -> Setup<'c> {
    Setup {
        constraints: if enforce { &reg.constraints } else { &[] },
        box_halfwidth: box_halfwidth(reg, extra),
        reference,
        options: options.clone(),
    }
}

/// Least squares on a whitened system, in closed form when unconstrained.
fn least_squares(
    reg: &Regression,
    kind: EstimatorKind,
    w: &Weighted,
    enforce: bool,
    options: &SdpOptions,
) -> Result<EstimatorReport> {
    let d = reg.num_params();
    let (r, y, rest) = compress_least_squares(&w.a, &w.b);
    let data_rank = rank(&r, FLAT_TOL);
    let mut warnings = Vec::new();
    if data_rank < d {
        warnings.push(format!("rank-deficient system (rank {data_rank} of {d})"));
    }
    if data_rank == 0 {
        warnings.push("data do not identify any parameter direction".into());
    }
    let (pi, solver, flat, polished) = if !enforce || reg.constraints.is_empty() {
        let (x, _) = lstsq_min_norm(&r, &y, FLAT_TOL);
        (x, None, d - data_rank, false)
    } else {
        // A common scale leaves the argmin alone but keeps the SDP well
        // conditioned when the weight is huge (near-noiseless auto-WLS).
        let scale = r.norm();
        let (r, y, rest) = if scale > 0.0 && scale.is_finite() {
            (r / scale, y / scale, rest / (scale * scale))
        } else {
            (r, y, rest)
        };
        let obj = Objective {
            d,
            terms: alloc::vec![Term::Squares { r, y, rest }],
        };
        let solved = objective::solve(&obj, &setup(reg, true, reg.reference.clone(), options, &[]))?;
        (solved.pi, Some(summary(&solved.solution)), solved.flat, solved.polished)
    };
    let residuals = per_sample_squares(w, &pi, reg.len());
    Ok(EstimatorReport {
        kind,
        objective: residuals.iter().sum(),
        pi_hat: params(reg, pi)?,
        solver,
        sigma_hat: None,
        weight: None,
        rho: None,
        per_sample_weighted_residuals: residuals,
        rank: data_rank,
        flat_directions: flat,
        schur_tightness: None,
        polished,
        warnings,
    })
}

fn fit_ols_with(reg: &Regression, enforce: bool, options: &SdpOptions) -> Result<EstimatorReport> {
    least_squares(reg, EstimatorKind::Ols, &whiten(reg, None), enforce, options)
}

/// `Σ̂ = (1/N) Σ r̂ᵢ r̂ᵢᵀ` from the unconstrained OLS residuals, with a
/// ridge of `1e-10 · tr(Σ̂)/n`.
pub fn residual_covariance(reg: &Regression) -> Result<DMatrix<f64>> {
    let n = reg.dof();
    let ols = fit_ols(reg, false)?;
    let mut sigma = DMatrix::zeros(n, n);
    for (row, tau) in reg.rows.iter().zip(&reg.taus) {
        let r = row.residual(&ols.pi_hat.values, tau);
        sigma += &r * r.transpose();
    }
    sigma /= reg.len().max(1) as f64;
    let tr = sigma.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::SingularCovariance);
    }
    for i in 0..n {
        sigma[(i, i)] += 1e-10 * tr / n as f64;
    }
    Ok(sigma)
}

/// `(W, Lᵀ, Σ̂)` with `W = L Lᵀ`.
type ResolvedWeight = (DMatrix<f64>, DMatrix<f64>, Option<DMatrix<f64>>);

fn resolve_weight(reg: &Regression, policy: &WeightPolicy) -> Result<ResolvedWeight> {
    let n = reg.dof();
    match policy {
        WeightPolicy::Fixed(w) => {
            if w.nrows() != n || w.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: "weight matrix",
                    expected: n,
                    got: w.nrows(),
                });
            }
            let w = symmetrize(w)?;
            let ch = w
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidSpec("weight matrix is not positive definite".into()))?;
            Ok((w, ch.l().transpose(), None))
        }
        WeightPolicy::Auto => {
            if reg.is_empty() {
                let eye = DMatrix::identity(n, n);
                return Ok((eye.clone(), eye, None));
            }
            let sigma = residual_covariance(reg)?;
            let ch = sigma.clone().cholesky().ok_or(Error::SingularCovariance)?;
            // W = Σ̂⁻¹ = L⁻ᵀ L⁻¹, so the whitening factor is L⁻¹.
            let linv = ch
                .l()
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or(Error::SingularCovariance)?;
            let w = linv.transpose() * &linv;
            Ok((crate::linalg::sym_part(&w), linv, Some(sigma)))
        }
    }
}

fn fit_wls_with(reg: &Regression, policy: &WeightPolicy, enforce: bool, options: &SdpOptions) -> Result<EstimatorReport> {
    let (w, factor, sigma) = resolve_weight(reg, policy)?;
    let mut report = least_squares(reg, EstimatorKind::Wls, &whiten(reg, Some(&factor)), enforce, options)?;
    report.weight = Some(w);
    report.sigma_hat = sigma;
    Ok(report)
}

fn fit_energy_with(reg: &Regression, enforce: bool, options: &SdpOptions) -> Result<EstimatorReport> {
    let mut report = least_squares(reg, EstimatorKind::EnergyLs, &energy_system(reg), enforce, options)?;
    if report.rank == 0 {
        report.warnings.push("all velocities vanish; the energy objective is identically zero".into());
    }
    Ok(report)
}

fn fit_dual_metric_with(reg: &Regression, enforce: bool, options: &SdpOptions) -> Result<EstimatorReport> {
    let metrics = reg
        .metrics
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("dual-metric fit needs per-sample metrics".into()))?;
    let d = reg.num_params();
    let obj = Objective {
        d,
        terms: alloc::vec![Term::DualMetric {
            rows: &reg.rows,
            taus: &reg.taus,
            metrics,
        }],
    };
    let solved = objective::solve(&obj, &setup(reg, enforce, reg.reference.clone(), options, &[]))?;
    let mut warnings = Vec::new();
    let mut residuals = Vec::with_capacity(reg.len());
    for ((row, tau), m) in reg.rows.iter().zip(&reg.taus).zip(metrics) {
        match dual_norm_sq(&m.assemble(&solved.pi), &row.residual(&solved.pi, tau)) {
            Ok(v) => residuals.push(v),
            Err(e) => {
                warnings.push(format!("{e}"));
                residuals.push(f64::NAN);
            }
        }
    }
    let tightness = solved
        .schur_pairs
        .iter()
        .map(|(s, exact)| match exact {
            Some(e) => (s - e).abs() / s.abs().max(1.0),
            None => f64::INFINITY,
        })
        .fold(0.0_f64, f64::max);
    if solved.solution.status != SdpStatus::Optimal {
        warnings.push(format!("solver status {:?}: {}", solved.solution.status, solved.solution.message));
    }
    Ok(EstimatorReport {
        kind: EstimatorKind::DualMetric,
        objective: residuals.iter().sum(),
        pi_hat: params(reg, solved.pi)?,
        solver: Some(summary(&solved.solution)),
        sigma_hat: None,
        weight: None,
        rho: None,
        per_sample_weighted_residuals: residuals,
        rank: reg.rank,
        flat_directions: solved.flat,
        schur_tightness: Some(tightness),
        polished: solved.polished,
        warnings,
    })
}

/// Parameter blocks `P(π)` the geometric regularizers act on.
fn parameter_blocks(reg: &Regression) -> Vec<&ConsistencyConstraint> {
    reg.constraints.iter().filter(|c| c.is_parameter_block()).collect()
}

fn check_nominal(reg: &Regression, nominal: &DynamicParams) -> Result<()> {
    if nominal.layout != reg.layout {
        return Err(Error::UnsupportedLayout("nominal parameters use a different layout".into()));
    }
    for c in parameter_blocks(reg) {
        if c.min_eigenvalue(&nominal.values) <= c.margin {
            return Err(Error::InvalidSpec(format!("nominal parameters violate {}", c.label)));
        }
    }
    Ok(())
}

/// `H(π₀)` as half the central-difference Hessian of the squared
/// affine-invariant distance `Σ_b ‖log(P₀^{-1/2} P P₀^{-1/2})‖²_F`.
pub fn pullback_hessian(blocks: &[&ConsistencyConstraint], pi0: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = pi0.len();
    let prepared: Vec<(DMatrix<f64>, &ConsistencyConstraint)> = blocks
        .iter()
        .map(|c| {
            let p0 = c.evaluate(pi0);
            let root = crate::linalg::metric_sqrt(&p0)?;
            let root_inv = root.try_inverse().ok_or(Error::NotPsd(0.0))?;
            Ok((root_inv, *c))
        })
        .collect::<Result<_>>()?;
    let dist2 = |pi: &DVector<f64>| -> f64 {
        prepared
            .iter()
            .map(|(ri, c)| {
                let m = crate::linalg::sym_part(&(ri * c.evaluate(pi) * ri));
                m.symmetric_eigenvalues().iter().map(|l| l.max(f64::MIN_POSITIVE).ln().powi(2)).sum::<f64>()
            })
            .sum()
    };
    let steps: Vec<f64> = (0..d).map(|i| 1e-5 * pi0[i].abs().max(1.0)).collect();
    let at = |di: &[(usize, f64)]| {
        let mut p = pi0.clone();
        for (i, v) in di {
            p[*i] += v;
        }
        dist2(&p)
    };
    let f0 = dist2(pi0);
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let hi = steps[i];
        h[(i, i)] = (at(&[(i, hi)]) - 2.0 * f0 + at(&[(i, -hi)])) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let v = (at(&[(i, hi), (j, hj)]) - at(&[(i, hi), (j, -hj)]) - at(&[(i, -hi), (j, hj)]) + at(&[(i, -hi), (j, -hj)]))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h * 0.5)
}

fn bregman_blocks(reg: &Regression, pi0: &DVector<f64>) -> Result<Vec<BregmanBlock>> {
    parameter_blocks(reg)
        .into_iter()
        .map(|c| {
            let p0 = c.evaluate(pi0);
            let ch = p0.clone().cholesky().ok_or(Error::NotPsd(crate::linalg::min_eigenvalue(&p0)))?;
            let logdet_p0 = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok(BregmanBlock {
                form: c.form.clone(),
                p0_inv: ch.inverse(),
                logdet_p0,
            })
        })
        .collect()
}

/// Regularizer value `g(π)` (no ρ), or `None` outside its domain.
pub fn regularizer_value(reg: &Regression, kind: EstimatorKind, nominal: &DVector<f64>, pi: &DVector<f64>) -> Result<Option<f64>> {
    let d = reg.num_params();
    match kind {
        EstimatorKind::RegBregman => {
            let obj = Objective {
                d,
                terms: alloc::vec![Term::Bregman {
                    rho: 1.0,
                    blocks: bregman_blocks(reg, nominal)?,
                }],
            };
            Ok(obj.value(pi))
        }
        EstimatorKind::RegPullback => {
            let h = pullback_hessian(&parameter_blocks(reg), nominal)?;
            let e = pi - nominal;
            Ok(Some(e.dot(&(&h * &e))))
        }
        _ => Err(Error::InvalidSpec("not a regularized estimator".into())),
    }
}

fn fit_regularized_with(
    reg: &Regression,
    kind: EstimatorKind,
    rho: Option<f64>,
    nominal: &DynamicParams,
    enforce: bool,
    options: &SdpOptions,
) -> Result<EstimatorReport> {
    if !matches!(kind, EstimatorKind::RegBregman | EstimatorKind::RegPullback) {
        return Err(Error::InvalidSpec("fit_regularized takes a regularized kind".into()));
    }
    if let Some(r) = rho {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidSpec(format!("rho must be positive, got {r}")));
        }
    }
    check_nominal(reg, nominal)?;
    let d = reg.num_params();
    let pi0 = &nominal.values;
    let (w, factor, sigma) = resolve_weight(reg, &WeightPolicy::Auto)?;
    let white = whiten(reg, Some(&factor));
    let (r, y, rest) = compress_least_squares(&white.a, &white.b);
    let data_rank = rank(&r, FLAT_TOL);

    let rho = match rho {
        Some(r) => r,
        None => {
            // Balance: ρ = 1e-2 · base objective / (g(π_base) + ε).
            let (base, _) = lstsq_min_norm(&r, &y, FLAT_TOL);
            let base_obj = (&r * &base - &y).norm_squared() + rest;
            let g = match regularizer_value(reg, kind, pi0, &base)? {
                Some(g) => g,
                None => regularizer_value(reg, EstimatorKind::RegPullback, pi0, &base)?.unwrap_or(1.0),
            };
            let rho = 1e-2 * base_obj / (g + 1e-12);
            if rho > 0.0 && rho.is_finite() {
                rho
            } else {
                1e-12
            }
        }
    };

    let mut terms = Vec::new();
    match kind {
        EstimatorKind::RegPullback => {
            // ‖R π − y‖² + ρ ‖H^{1/2} (π − π₀)‖² as one stacked system.
            let h = pullback_hessian(&parameter_blocks(reg), pi0)?;
            let l = crate::linalg::psd_sqrt(&h) * rho.sqrt();
            let mut a = DMatrix::zeros(2 * d, d);
            a.rows_mut(0, d).copy_from(&r);
            a.rows_mut(d, d).copy_from(&l);
            let mut b = DVector::zeros(2 * d);
            b.rows_mut(0, d).copy_from(&y);
            b.rows_mut(d, d).copy_from(&(&l * pi0));
            let (r2, y2, rest2) = compress_least_squares(&a, &b);
            terms.push(Term::Squares {
                r: r2,
                y: y2,
                rest: rest + rest2,
            });
        }
        _ => {
            terms.push(Term::Squares { r, y, rest });
            terms.push(Term::Bregman {
                rho,
                blocks: bregman_blocks(reg, pi0)?,
            });
        }
    }
    let obj = Objective { d, terms };
    let solved = objective::solve(&obj, &setup(reg, enforce, pi0.clone(), options, &[pi0]))?;
    let residuals = per_sample_squares(&white, &solved.pi, reg.len());
    let mut warnings = Vec::new();
    if solved.solution.status != SdpStatus::Optimal {
        warnings.push(format!("solver status {:?}: {}", solved.solution.status, solved.solution.message));
    }
    Ok(EstimatorReport {
        kind,
        objective: obj.value(&solved.pi).unwrap_or(f64::NAN),
        pi_hat: params(reg, solved.pi)?,
        solver: Some(summary(&solved.solution)),
        sigma_hat: sigma,
        weight: Some(w),
        rho: Some(rho),
        per_sample_weighted_residuals: residuals,
        rank: data_rank,
        flat_directions: solved.flat,
        schur_tightness: None,
        polished: solved.polished,
        warnings,
    })
}

#[cfg(test)]
mod tests;
