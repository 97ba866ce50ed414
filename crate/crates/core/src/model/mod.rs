//! Model classes, parameter layouts, regressors, affine metrics and
//! physical-consistency LMIs.
//!
//! A [`Model`] pairs a mechanism [`Structure`] (defined in its physical
//! chart) with a linear chart map `q' = D q`. Velocities and accelerations
//! transform like `q`; forces are covectors and transform as `τ' = D⁻ᵀ τ`,
//! so regressors become `D⁻ᵀ Y` and metrics `D⁻ᵀ M D⁻¹`.

mod arm;
mod crawler;
mod pan_tilt;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use arm::{LinkInertial, TwoLinkArm};
pub use crawler::DragCrawler;
pub use pan_tilt::PanTilt;

pub use crate::linalg::{dual_norm_sq, metric_sqrt};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sym_part, symmetrize};

/// Standard gravity (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Which physical effect the metric describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ModelClass {
    /// `τ = M(q) q̈ + C(q, q̇) q̇ + g(q)`, metric = mass matrix.
    InertiaDominated,
    /// `τ = M(q) q̇`, metric = drag matrix.
    DragDominated,
}

/// Physical role of one dynamic parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ParamRole {
    Mass,
    FirstMomentX,
    FirstMomentY,
    RotationalInertia,
    /// `m l²` of a point mass on a massless link.
    PointInertia,
    /// `m l` of a point mass on a massless link.
    GravityMoment,
    LongitudinalDrag,
    LateralDrag,
    JointDrag,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamEntry {
    pub name: String,
    pub role: ParamRole,
    pub unit: String,
    /// Body (link) or joint index the entry belongs to.
    pub body: usize,
}

impl ParamEntry {
    pub fn new(name: impl Into<String>, role: ParamRole, unit: impl Into<String>, body: usize) -> Self {
        Self {
            name: name.into(),
            role,
            unit: unit.into(),
            body,
        }
    }
}

/// Ordered, named parameter layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// The dynamic parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DynamicParams {
    pub values: DVector<f64>,
    pub layout: ParamLayout,
}

impl DynamicParams {
    pub fn new(values: DVector<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.layout.index_of(name).map(|i| self.values[i])
    }

    /// Entrywise comparability check.
    pub fn same_layout(&self, other: &DynamicParams) -> bool {
        self.layout == other.layout
    }
}

/// One time step of kinematic and force data, in the dataset's chart.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: Option<DVector<f64>>,
    /// Generalized force covector components.
    pub tau: DVector<f64>,
}

impl Sample {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.q.len();
        let mismatch = |got| Error::DimensionMismatch {
            what: "sample vector",
            expected: n,
            got,
        };
        if self.qd.len() != n {
            return Err(mismatch(self.qd.len()));
        }
        if self.tau.len() != n {
            return Err(mismatch(self.tau.len()));
        }
        if let Some(a) = &self.qdd {
            if a.len() != n {
                return Err(mismatch(a.len()));
            }
        }
        Ok(())
    }
}

/// An ordered run of samples sharing one chart.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n: usize,
    /// Nominal sampling interval (s).
    pub dt: f64,
    pub chart_id: String,
    pub coordinate_names: Vec<String>,
    pub coordinate_units: Vec<String>,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        dt: f64,
        chart_id: impl Into<String>,
        coordinate_names: Vec<String>,
        coordinate_units: Vec<String>,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidDataset("dataset has no samples".into()))?;
        let n = first.dim();
        let ds = Self {
            samples,
            n,
            dt,
            chart_id: chart_id.into(),
            coordinate_names,
            coordinate_units,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        for s in &self.samples {
            if s.dim() != self.n {
                return Err(Error::DimensionMismatch {
                    what: "dataset sample",
                    expected: self.n,
                    got: s.dim(),
                });
            }
            s.check()?;
        }
        if self.samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidDataset("timestamps must be strictly increasing".into()));
        }
        if self.coordinate_names.len() != self.n || self.coordinate_units.len() != self.n {
            return Err(Error::InvalidDataset(format!(
                "expected {} coordinate names and units",
                self.n
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenates datasets sharing a chart; later runs are shifted in time
    /// so that timestamps stay strictly increasing.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidDataset("nothing to concatenate".into()))?;
        let mut samples: Vec<Sample> = Vec::new();
        for p in parts {
            if p.n != first.n || p.chart_id != first.chart_id {
                return Err(Error::InvalidDataset("concatenated datasets differ in chart or dimension".into()));
            }
            let start = p.samples[0].t;
            let shift = match samples.last() {
                Some(Sample { t, .. }) => *t + p.dt - start,
                None => 0.0,
            };
            for s in &p.samples {
                let mut s = s.clone();
                s.t += shift;
                samples.push(s);
            }
        }
        Dataset::new(
            samples,
            first.dt,
            first.chart_id.clone(),
            first.coordinate_names.clone(),
            first.coordinate_units.clone(),
        )
    }
}

/// Regressor `Y(q, q̇, q̈)` at one sample; `Y π` predicts `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorRow {
    pub y: DMatrix<f64>,
}

impl RegressorRow {
    pub fn predict(&self, pi: &DVector<f64>) -> DVector<f64> {
        &self.y * pi
    }

    pub fn residual(&self, pi: &DVector<f64>, tau: &DVector<f64>) -> DVector<f64> {
        &self.y * pi - tau
    }
}

/// Affine-in-parameter symmetric matrix `A(π) = A₀ + Σₚ πₚ Aₚ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl AffineMatrix {
    /// Builds the form, symmetrizing every block.
    pub fn new(constant: DMatrix<f64>, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = constant.nrows();
        let constant = symmetrize(&constant)?;
        let coeffs = coeffs
            .iter()
            .map(|c| {
                if c.nrows() != k {
                    return Err(Error::DimensionMismatch {
                        what: "affine block",
                        expected: k,
                        got: c.nrows(),
                    });
                }
                symmetrize(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { constant, coeffs })
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len()
    }

    pub fn assemble(&self, pi: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (p, c) in pi.iter().zip(&self.coeffs) {
            if *p != 0.0 {
                m += c * *p;
            }
        }
        m
    }

    /// Applies the congruence `A ↦ Tᵀ A T` to every block.
    pub fn congruence(&self, t: &DMatrix<f64>) -> AffineMatrix {
        let tt = t.transpose();
        AffineMatrix {
            constant: sym_part(&(&tt * &self.constant * t)),
            coeffs: self.coeffs.iter().map(|c| sym_part(&(&tt * c * t))).collect(),
        }
    }

    /// Re-expresses the form in reduced parameters `π = π_c + U z`.
    pub fn reparametrize(&self, center: &DVector<f64>, basis: &DMatrix<f64>) -> AffineMatrix {
        let constant = self.assemble(center);
        let coeffs = (0..basis.ncols())
            .map(|k| {
                let mut m = DMatrix::zeros(self.size(), self.size());
                for (p, c) in self.coeffs.iter().enumerate() {
                    let w = basis[(p, k)];
                    if w != 0.0 {
                        m += c * w;
                    }
                }
                m
            })
            .collect();
        AffineMatrix { constant, coeffs }
    }
}

/// Metric decomposition `M(q, π) = M₀(q) + Σₚ πₚ Mₚ(q)` at one sample.
pub type AffineMetric = AffineMatrix;

/// Category of a consistency block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ConstraintKind {
    /// Planar pseudo-inertia of one rigid body.
    PseudoInertia,
    /// Nonnegativity of one scalar coefficient.
    ScalarPositivity,
    /// Positive definiteness of the assembled metric at a probe configuration.
    ProbeMetric,
}

/// One affine LMI `A(π) ⪰ margin · I` on the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConstraint {
    pub label: String,
    pub kind: ConstraintKind,
    pub form: AffineMatrix,
    pub margin: f64,
}

impl ConsistencyConstraint {
    pub fn evaluate(&self, pi: &DVector<f64>) -> DMatrix<f64> {
        self.form.assemble(pi)
    }

    pub fn min_eigenvalue(&self, pi: &DVector<f64>) -> f64 {
        min_eigenvalue(&self.evaluate(pi))
    }

    /// Feasible within `tol`: `λ_min(A(π)) ≥ margin − tol`.
    pub fn is_satisfied(&self, pi: &DVector<f64>, tol: f64) -> bool {
        self.min_eigenvalue(pi) >= self.margin - tol
    }

    /// Whether the block constrains the parameter matrix itself (as opposed
    /// to a probe configuration); these are the blocks geometric
    /// regularizers act on.
    pub fn is_parameter_block(&self) -> bool {
        !matches!(self.kind, ConstraintKind::ProbeMetric)
    }
}

/// Physics of one mechanism family in its physical chart.
pub trait Mechanics {
    fn class(&self) -> ModelClass;
    fn dof(&self) -> usize;
    fn layout(&self) -> ParamLayout;
    fn coordinate_names(&self) -> Vec<String>;
    fn coordinate_units(&self) -> Vec<String>;
    /// Indices of internal (shape) coordinates.
    fn shape_coordinates(&self) -> Vec<usize>;
    /// `Y(q, q̇, q̈)`; `qdd` is ignored by drag models.
    fn regressor(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> DMatrix<f64>;
    /// `(M₀, [Mₚ])` such that the metric is `M₀ + Σ πₚ Mₚ`.
    fn metric_basis(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>);
    /// Metric evaluated directly from the physics (independent of the
    /// affine decomposition).
    fn metric(&self, q: &DVector<f64>, pi: &DVector<f64>) -> DMatrix<f64>;
    /// Generalized force evaluated directly from the physics.
    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>, pi: &DVector<f64>) -> DVector<f64>;
    /// Pseudo-inertia or scalar-positivity blocks.
    fn parameter_blocks(&self) -> Vec<ConsistencyConstraint>;
    /// A physically valid parameter vector of typical magnitude.
    fn reference_params(&self) -> DVector<f64>;
}

/// Mechanism descriptions supported by the library.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum Structure {
    PanTilt(PanTilt),
    TwoLinkArm(TwoLinkArm),
    DragCrawler(DragCrawler),
}

impl Structure {
    pub fn mechanics(&self) -> &dyn Mechanics {
        match self {
            Structure::PanTilt(m) => m,
            Structure::TwoLinkArm(m) => m,
            Structure::DragCrawler(m) => m,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Structure::PanTilt(_) => "pan_tilt",
            Structure::TwoLinkArm(_) => "two_link_arm",
            Structure::DragCrawler(_) => "drag_crawler",
        }
    }
}

/// A structure expressed in a linear chart `q' = D q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub structure: Structure,
    chart: DMatrix<f64>,
    chart_inv: DMatrix<f64>,
}

impl Model {
    /// Model in the structure's physical chart.
    pub fn new(structure: Structure) -> Self {
        let n = structure.mechanics().dof();
        Self {
            structure,
            chart: DMatrix::identity(n, n),
            chart_inv: DMatrix::identity(n, n),
        }
    }

    /// Model in the chart `q' = D q` relative to the physical chart.
    pub fn with_chart(structure: Structure, chart: DMatrix<f64>) -> Result<Self> {
        let n = structure.mechanics().dof();
        if chart.nrows() != n || chart.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "chart map",
                expected: n,
                got: chart.nrows(),
            });
        }
        let chart_inv = invert_chart(&chart)?;
        Ok(Self {
            structure,
            chart,
            chart_inv,
        })
    }

    /// The same structure in the chart `q'' = E q'` (composition `E D`).
    pub fn rechart(&self, e: &DMatrix<f64>) -> Result<Self> {
        Self::with_chart(self.structure.clone(), e * &self.chart)
    }

    pub fn chart(&self) -> &DMatrix<f64> {
        &self.chart
    }

    pub fn mechanics(&self) -> &dyn Mechanics {
        self.structure.mechanics()
    }

    pub fn class(&self) -> ModelClass {
        self.mechanics().class()
    }

    pub fn dof(&self) -> usize {
        self.mechanics().dof()
    }

    pub fn layout(&self) -> ParamLayout {
        self.mechanics().layout()
    }

    pub fn num_params(&self) -> usize {
        self.layout().len()
    }

    fn to_physical(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.chart_inv * v
    }

    fn check_dim(&self, v: &DVector<f64>, what: &'static str) -> Result<()> {
        if v.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dof(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Regressor of one sample in this model's chart.
    pub fn build_regressor(&self, sample: &Sample) -> Result<RegressorRow> {
        self.check_dim(&sample.q, "configuration")?;
        sample.check()?;
        let qdd = match (&sample.qdd, self.class()) {
            (Some(a), _) => a.clone(),
            (None, ModelClass::DragDominated) => DVector::zeros(self.dof()),
            (None, ModelClass::InertiaDominated) => return Err(Error::MissingAcceleration { t: sample.t }),
        };
        let y = self.mechanics().regressor(
            &self.to_physical(&sample.q),
            &self.to_physical(&sample.qd),
            &self.to_physical(&qdd),
        );
        Ok(RegressorRow {
            y: self.chart_inv.transpose() * y,
        })
    }

    /// Regressor with accelerations zeroed (Coriolis, gravity and drag terms).
    pub fn bias_regressor(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<RegressorRow> {
        self.check_dim(q, "configuration")?;
        self.check_dim(qd, "velocity")?;
        let zero = DVector::zeros(self.dof());
        let y = self
            .mechanics()
            .regressor(&self.to_physical(q), &self.to_physical(qd), &zero);
        Ok(RegressorRow {
            y: self.chart_inv.transpose() * y,
        })
    }

    /// Affine metric decomposition at configuration `q` (this chart).
    pub fn build_affine_metric(&self, q: &DVector<f64>) -> Result<AffineMetric> {
        self.check_dim(q, "configuration")?;
        let (m0, mp) = self.mechanics().metric_basis(&self.to_physical(q));
        let form = AffineMatrix::new(m0, mp)?;
        Ok(form.congruence(&self.chart_inv))
    }

    /// Metric evaluated directly (this chart).
    pub fn metric(&self, q: &DVector<f64>, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q, "configuration")?;
        let m = self.mechanics().metric(&self.to_physical(q), pi);
        let t = &self.chart_inv;
        Ok(sym_part(&(t.transpose() * m * t)))
    }

    /// Metric at configuration `q` (this chart) expressed in the mechanism's
    /// physical chart. Singularity checks use this so that they do not
    /// depend on the chart.
    pub fn physical_metric(&self, q: &DVector<f64>, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q, "configuration")?;
        Ok(sym_part(&self.mechanics().metric(&self.to_physical(q), pi)))
    }

    /// Generalized force from the physics (this chart).
    pub fn inverse_dynamics(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        pi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_dim(q, "configuration")?;
        let tau = self.mechanics().inverse_dynamics(
            &self.to_physical(q),
            &self.to_physical(qd),
            &self.to_physical(qdd),
            pi,
        );
        Ok(self.chart_inv.transpose() * tau)
    }

    /// Physical-consistency blocks. Drag models additionally get one metric
    /// positivity block per probe configuration (given in this chart).
    pub fn consistency_constraints(&self, probes: &[DVector<f64>]) -> Result<Vec<ConsistencyConstraint>> {
        let mut out = self.mechanics().parameter_blocks();
        if self.class() == ModelClass::DragDominated {
            for (i, q) in probes.iter().enumerate() {
                out.push(ConsistencyConstraint {
                    label: format!("drag matrix at probe {i}"),
                    kind: ConstraintKind::ProbeMetric,
                    form: self.build_affine_metric(q)?,
                    margin: 0.0,
                });
            }
        }
        Ok(out)
    }

    /// Validates that a layout matches this model and returns its
    /// consistency blocks.
    pub fn constraints_for_layout(&self, layout: &ParamLayout, probes: &[DVector<f64>]) -> Result<Vec<ConsistencyConstraint>> {
        if *layout != self.layout() {
            return Err(Error::UnsupportedLayout(format!(
                "layout with {} entries does not match {} layout",
                layout.len(),
                self.structure.name()
            )));
        }
        self.consistency_constraints(probes)
    }
}

/// Inverts a chart map, rejecting singular or badly conditioned ones.
pub fn invert_chart(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = chart_condition(d);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::SingularChart(cond));
    }
    d.clone().try_inverse().ok_or(Error::SingularChart(cond))
}

/// 2-norm condition number of a chart map.
pub fn chart_condition(d: &DMatrix<f64>) -> f64 {
    let sv = d.clone().svd(false, false).singular_values;
    let hi = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    let lo = sv.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// 1×1 nonnegativity block on parameter `index`.
pub(crate) fn scalar_block(label: String, index: usize, d: usize) -> ConsistencyConstraint {
    let mut coeffs = alloc::vec![DMatrix::zeros(1, 1); d];
    coeffs[index][(0, 0)] = 1.0;
    ConsistencyConstraint {
        label,
        kind: ConstraintKind::ScalarPositivity,
        form: AffineMatrix {
            constant: DMatrix::zeros(1, 1),
            coeffs,
        },
        margin: 0.0,
    }
}

/// Shortcut used by the mechanism modules.
pub(crate) fn dv(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}
