//! Forward-dynamics prediction and the scores built on it: shift-searched
//! normalized cross-correlation per coordinate, RMSE, parameter error on
//! the identifiable subspace and chart-invariance probes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::estimators::{fit, EstimatorSpec, Regression};
use crate::linalg::{check_metric, row_and_null_space};
use crate::model::{Dataset, Model, ModelClass};
use crate::simulate::chart_tag;

/// Relative singular-value threshold of the identifiable subspace.
pub const IDENTIFIABLE_TOL: f64 = 1e-10;

/// Which signal a model class predicts from forces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PredictedQuantity {
    Acceleration,
    Velocity,
}

/// Per-coordinate predicted signals; samples rejected by the singularity
/// guard hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub quantity: PredictedQuantity,
    pub signals: Vec<Vec<f64>>,
    pub excluded: Vec<usize>,
}

fn quantity_for(model: &Model) -> PredictedQuantity {
    match model.class() {
        ModelClass::InertiaDominated => PredictedQuantity::Acceleration,
        ModelClass::DragDominated => PredictedQuantity::Velocity,
    }
}

/// `q̈ = M⁻¹(τ − h(q, q̇))` for inertia models, `q̇ = M⁻¹ τ` for drag
/// models, with `M` and `h` assembled from `pi_hat`. The dataset must be
/// in the model's chart.
pub fn predict_forward(model: &Model, pi_hat: &DVector<f64>, dataset: &Dataset) -> Result<Prediction> {
    dataset.validate()?;
    let n = model.dof();
    if dataset.n != n {
        return Err(Error::DimensionMismatch {
            what: "dataset dimension",
            expected: n,
            got: dataset.n,
        });
    }
    if pi_hat.len() != model.num_params() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: model.num_params(),
            got: pi_hat.len(),
        });
    }
    let quantity = quantity_for(model);
    let reference = model.mechanics().reference_params();
    let mut signals = alloc::vec![Vec::with_capacity(dataset.len()); n];
    let mut excluded = Vec::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        if check_metric(&model.physical_metric(&s.q, &reference)?).is_err() {
            excluded.push(i);
            for sig in signals.iter_mut() {
                sig.push(f64::NAN);
            }
            continue;
        }
        let m = model.metric(&s.q, pi_hat)?;
        let rhs = match quantity {
            PredictedQuantity::Acceleration => &s.tau - model.bias_regressor(&s.q, &s.qd)?.predict(pi_hat),
            PredictedQuantity::Velocity => s.tau.clone(),
        };
        let ch = m.clone().cholesky().ok_or_else(|| {
            Error::Evaluation(format!(
                "metric at sample {i} is not positive definite (min eigenvalue {:e})",
                crate::linalg::min_eigenvalue(&m)
            ))
        })?;
        let out = ch.solve(&rhs);
        for (sig, v) in signals.iter_mut().zip(out.iter()) {
            sig.push(*v);
        }
    }
    Ok(Prediction {
        quantity,
        signals,
        excluded,
    })
}

/// The measured counterpart of [`predict_forward`].
pub fn measured_signals(model: &Model, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let n = dataset.n;
    let mut out = alloc::vec![Vec::with_capacity(dataset.len()); n];
    for s in &dataset.samples {
        let v = match quantity_for(model) {
            PredictedQuantity::Acceleration => s.qdd.as_ref().ok_or(Error::MissingAcceleration { t: s.t })?,
            PredictedQuantity::Velocity => &s.qd,
        };
        for (sig, x) in out.iter_mut().zip(v.iter()) {
            sig.push(*x);
        }
    }
    Ok(out)
}

/// Result of a shift-searched correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NccResult {
    pub ncc: f64,
    /// `pred[i + shift]` is compared with `meas[i]`.
    pub shift: i64,
    /// A signal had zero variance on the overlap.
    pub degenerate: bool,
}

/// Half-width of the shift search: `round((5/360) · T_slow · rate)`.
pub fn shift_window(slowest_period: f64, rate: f64) -> usize {
    ((5.0 / 360.0) * slowest_period * rate).round().max(0.0) as usize
}

/// Mean-removed correlation of `pred[i + k]` against `meas[i]` over the
/// overlap, skipping pairs with a `NaN`.
pub fn ncc_at_shift(pred: &[f64], meas: &[f64], k: i64) -> (f64, bool) {
    let len = pred.len().min(meas.len()) as i64;
    let lo = 0.max(-k);
    let hi = len.min(len - k);
    let mut pairs = Vec::with_capacity((hi - lo).max(0) as usize);
    for i in lo..hi {
        let (a, b) = (pred[(i + k) as usize], meas[i as usize]);
        if a.is_finite() && b.is_finite() {
            pairs.push((a, b));
        }
    }
    if pairs.len() < 2 {
        return (0.0, true);
    }
    let count = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / count;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / count;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    // Relative floor so that round-off on a constant signal counts as flat.
    let flat = |s: f64, m: f64| s <= (1e-14 * m.abs()).powi(2) * count || s == 0.0;
    if flat(saa, ma) || flat(sbb, mb) {
        return (0.0, true);
    }
    ((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0), false)
}

/// Largest correlation over integer shifts `|k| ≤ shift_window(..)`; ties
/// go to the smallest `|k|`.
pub fn ncc_max_shift(pred: &[f64], meas: &[f64], slowest_period: f64, rate: f64) -> Result<NccResult> {
    if pred.len() != meas.len() {
        return Err(Error::DimensionMismatch {
            what: "signal length",
            expected: meas.len(),
            got: pred.len(),
        });
    }
    if !(slowest_period > 0.0) || !(rate > 0.0) {
        return Err(Error::Evaluation("slowest period and rate must be positive".into()));
    }
    let window = shift_window(slowest_period, rate);
    if window >= pred.len() {
        return Err(Error::Evaluation(format!(
            "shift window {window} does not fit in {} samples",
            pred.len()
        )));
    }
    let (ncc, degenerate) = ncc_at_shift(pred, meas, 0);
    let mut best = NccResult { ncc, shift: 0, degenerate };
    for k in 1..=window as i64 {
        for s in [k, -k] {
            let (v, deg) = ncc_at_shift(pred, meas, s);
            if !deg && (best.degenerate || v > best.ncc) {
                best = NccResult {
                    ncc: v,
                    shift: s,
                    degenerate: false,
                };
            }
        }
    }
    Ok(best)
}

/// Root-mean-square difference over the finite pairs.
pub fn rmse(pred: &[f64], meas: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in pred.iter().zip(meas) {
        if a.is_finite() && b.is_finite() {
            total += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        (total / count as f64).sqrt()
    }
}

/// Orthogonal projector onto the row space of the stacked regressor.
pub fn identifiable_projection(reg: &Regression) -> DMatrix<f64> {
    let (a, _) = reg.stacked();
    let (row, _) = row_and_null_space(&a, IDENTIFIABLE_TOL);
    &row * row.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParameterErrors {
    pub raw: f64,
    pub projected: f64,
    /// `projected / ‖P π*‖`.
    pub projected_relative: f64,
}

pub fn parameter_errors(projector: &DMatrix<f64>, pi_hat: &DVector<f64>, truth: &DVector<f64>) -> ParameterErrors {
    let e = pi_hat - truth;
    let projected = (projector * &e).norm();
    ParameterErrors {
        raw: e.norm(),
        projected,
        projected_relative: projected / (projector * truth).norm().max(f64::MIN_POSITIVE),
    }
}

/// One row of an invariance probe.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InvarianceRow {
    pub chart: String,
    /// `‖π̂_D − π̂‖ / ‖π̂‖`.
    pub pi_shift: f64,
    /// `|J_D − J| / |J|`.
    pub objective_shift: f64,
}

/// Refits after each chart map and reports how far the estimate and the
/// optimal objective move.
pub fn invariance_probe(reg: &Regression, spec: &EstimatorSpec, charts: &[DMatrix<f64>]) -> Result<Vec<InvarianceRow>> {
    let base = fit(reg, spec)?;
    let scale = base.pi_hat.values.norm().max(f64::MIN_POSITIVE);
    let oscale = base.objective.abs().max(f64::MIN_POSITIVE);
    charts
        .iter()
        .map(|d| {
            let moved = fit(&reg.transform(d)?, spec)?;
            Ok(InvarianceRow {
                chart: chart_tag(d),
                pi_shift: (&moved.pi_hat.values - &base.pi_hat.values).norm() / scale,
                objective_shift: (moved.objective - base.objective).abs() / oscale,
            })
        })
        .collect()
}

/// Sample mean and (n − 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoordinateScore {
    pub coordinate: String,
    pub ncc: f64,
    pub shift: i64,
    pub degenerate: bool,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryScore {
    pub trajectory: usize,
    pub excluded_samples: usize,
    pub coordinates: Vec<CoordinateScore>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoordinateSummary {
    pub coordinate: String,
    pub ncc_mean: f64,
    pub ncc_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub estimator: String,
    pub quantity: PredictedQuantity,
    pub trajectories: Vec<TrajectoryScore>,
    pub summary: Vec<CoordinateSummary>,
    pub parameter_errors: Option<ParameterErrors>,
    pub invariance: Vec<InvarianceRow>,
}

impl EvalReport {
    /// Mean NCC over the given coordinates (per-trajectory means averaged).
    pub fn mean_ncc(&self, coordinates: &[usize]) -> f64 {
        let vals: Vec<f64> = coordinates.iter().map(|&c| self.summary[c].ncc_mean).collect();
        mean_std(&vals).0
    }
}

/// Scores `pi_hat` on each test trajectory. Shifts are searched within the
/// window set by `slowest_period` and each dataset's sample rate.
pub fn evaluate(
    estimator: &str,
    model: &Model,
    pi_hat: &DVector<f64>,
    tests: &[Dataset],
    slowest_period: f64,
) -> Result<EvalReport> {
    if tests.is_empty() {
        return Err(Error::Evaluation("no test trajectories".into()));
    }
    let names = model.mechanics().coordinate_names();
    let mut trajectories = Vec::with_capacity(tests.len());
    for (t, ds) in tests.iter().enumerate() {
        let pred = predict_forward(model, pi_hat, ds)?;
        let meas = measured_signals(model, ds)?;
        let rate = 1.0 / ds.dt;
        let mut coordinates = Vec::with_capacity(names.len());
        for (c, name) in names.iter().enumerate() {
            let r = ncc_max_shift(&pred.signals[c], &meas[c], slowest_period, rate)?;
            coordinates.push(CoordinateScore {
                coordinate: name.clone(),
                ncc: r.ncc,
                shift: r.shift,
                degenerate: r.degenerate,
                rmse: rmse(&pred.signals[c], &meas[c]),
            });
        }
        trajectories.push(TrajectoryScore {
            trajectory: t,
            excluded_samples: pred.excluded.len(),
            coordinates,
        });
    }
    let summary = names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let ncc: Vec<f64> = trajectories.iter().map(|t| t.coordinates[c].ncc).collect();
            let err: Vec<f64> = trajectories.iter().map(|t| t.coordinates[c].rmse).collect();
            let (ncc_mean, ncc_std) = mean_std(&ncc);
            let (rmse_mean, rmse_std) = mean_std(&err);
            CoordinateSummary {
                coordinate: name.clone(),
                ncc_mean,
                ncc_std,
                rmse_mean,
                rmse_std,
            }
        })
        .collect();
    Ok(EvalReport {
        estimator: estimator.into(),
        quantity: quantity_for(model),
        trajectories,
        summary,
        parameter_errors: None,
        invariance: Vec::new(),
    })
}
