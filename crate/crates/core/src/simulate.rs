//! Ground-truth mechanisms, sinusoidal excitation, noise and chart
//! rescaling.
//!
//! Trajectories are prescribed kinematically (`q`, `q̇`, `q̈` in closed
//! form) and forces come from exact inverse dynamics, so no integrator
//! error enters the data.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::Regression;
use crate::linalg::{metric_sqrt, psd_sqrt, sym_eigenvalues, symmetrize};
use crate::model::{invert_chart, Dataset, DragCrawler, DynamicParams, LinkInertial, Model, PanTilt, Sample, Structure, TwoLinkArm};

/// Chart label of data in the mechanism's own coordinates.
pub const PHYSICAL_CHART: &str = "physical";

/// Largest tilt magnitude the pan–tilt excitation may reach.
pub const PAN_TILT_TILT_LIMIT: f64 = 80.0 * PI / 180.0;

/// A structure with its ground-truth parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mechanism {
    pub structure: Structure,
    pub ground_truth: DynamicParams,
}

impl Mechanism {
    /// Checks that the ground truth satisfies every parameter block with a
    /// margin of at least `1e-6`.
    pub fn new(structure: Structure, values: DVector<f64>) -> Result<Self> {
        let model = Model::new(structure.clone());
        let ground_truth = DynamicParams::new(values, model.layout())?;
        for c in model.mechanics().parameter_blocks() {
            let e = c.min_eigenvalue(&ground_truth.values);
            if e < c.margin + 1e-6 {
                return Err(Error::InvalidSpec(format!("ground truth violates {} (min eigenvalue {e:e})", c.label)));
            }
        }
        Ok(Self { structure, ground_truth })
    }

    /// Point mass `m` on a massless link of length `l`.
    pub fn pan_tilt(mass: f64, length: f64, gravity: bool) -> Result<Self> {
        let s = PanTilt::new(gravity);
        let values = s.params_for(mass, length);
        Self::new(Structure::PanTilt(s), values)
    }

    pub fn two_link_arm(lengths: [f64; 2], links: [LinkInertial; 2], gravity: bool) -> Result<Self> {
        let s = TwoLinkArm::new(lengths, gravity);
        let values = s.params_for(&links);
        Self::new(Structure::TwoLinkArm(s), values)
    }

    /// `link_drags[i] = (longitudinal, lateral)` for rear, middle, front.
    pub fn drag_crawler(lengths: [f64; 3], link_drags: [(f64, f64); 3], joint_drags: [f64; 2]) -> Result<Self> {
        let mut v = Vec::with_capacity(8);
        for (long, lat) in link_drags {
            v.push(long);
            v.push(lat);
        }
        v.extend_from_slice(&joint_drags);
        Self::new(Structure::DragCrawler(DragCrawler::new(lengths)), DVector::from_vec(v))
    }

    /// Desk-scale defaults used by the reproduction profiles.
    pub fn default_pan_tilt() -> Self {
        Self::pan_tilt(0.5, 0.3, false).expect("valid defaults")
    }

    pub fn default_arm() -> Self {
        let link = |m: f64, l: f64, cy: f64| LinkInertial {
            mass: m,
            com: [0.5 * l, cy],
            inertia_com: m * l * l / 12.0,
        };
        Self::two_link_arm([0.6, 0.5], [link(2.0, 0.6, 0.02), link(1.2, 0.5, -0.03)], true).expect("valid defaults")
    }

    pub fn default_crawler() -> Self {
        Self::drag_crawler([0.25, 0.3, 0.25], [(1.0, 6.0), (1.4, 8.0), (0.8, 5.0)], [0.05, 0.08]).expect("valid defaults")
    }

    pub fn model(&self) -> Model {
        Model::new(self.structure.clone())
    }
}

/// One sinusoid `A sin(2π f t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    /// rad.
    pub phase: f64,
}

/// Per-coordinate sums of sinusoids around fixed offsets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Excitation {
    pub offsets: Vec<f64>,
    pub coordinates: Vec<Vec<Sinusoid>>,
    /// s.
    pub duration: f64,
    /// Hz.
    pub rate: f64,
}

/// Whether `r` lies within `tol` of some `p/q` with `1 ≤ p, q ≤ 8`.
fn near_small_ratio(r: f64, tol: f64) -> bool {
    (1..=8).any(|p| (1..=8).any(|q| (r - p as f64 / q as f64).abs() <= tol))
}

/// Rejects frequency sets in which two frequencies are (nearly) related by
/// a ratio of small integers.
pub fn check_non_harmonic(freqs: &[f64]) -> Result<()> {
    for (i, a) in freqs.iter().enumerate() {
        if !(*a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidExcitation(format!("frequency {a} Hz must be positive")));
        }
        for b in &freqs[i + 1..] {
            let r = a / b;
            if near_small_ratio(r, 1e-3) {
                return Err(Error::InvalidExcitation(format!(
                    "frequencies {a} Hz and {b} Hz are harmonically related (ratio {r:.4})"
                )));
            }
        }
    }
    Ok(())
}

/// Draws `count` mutually non-harmonic frequencies from `[lo, hi]`.
pub fn non_harmonic_frequencies(count: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = Vec::with_capacity(count);
    for _ in 0..100_000 {
        if out.len() == count {
            break;
        }
        // Three significant decimals keep the values readable in configs.
        let f = (rng.random_range(lo..hi) * 1000.0).round() / 1000.0;
        let mut cand = out.clone();
        cand.push(f);
        if check_non_harmonic(&cand).is_ok() {
            out.push(f);
        }
    }
    if out.len() < count {
        return Err(Error::InvalidExcitation(format!("could not place {count} non-harmonic frequencies in [{lo}, {hi}] Hz")));
    }
    Ok(out)
}

impl Excitation {
    pub fn dof(&self) -> usize {
        self.coordinates.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.coordinates.iter().flatten().map(|s| s.frequency).collect()
    }

    /// `1 / min f`.
    pub fn slowest_period(&self) -> f64 {
        1.0 / self.frequencies().iter().fold(f64::INFINITY, |m, f| m.min(*f))
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.coordinates.len() {
            return Err(Error::InvalidExcitation("one offset per coordinate is required".into()));
        }
        if !(self.rate > 0.0) || !(self.duration > 0.0) || self.sample_count() < 2 {
            return Err(Error::InvalidExcitation("duration and rate must give at least two samples".into()));
        }
        let freqs = self.frequencies();
        if freqs.is_empty() {
            return Err(Error::InvalidExcitation("no sinusoids".into()));
        }
        check_non_harmonic(&freqs)
    }

    /// Largest possible `|q_i|`.
    pub fn bound(&self, i: usize) -> f64 {
        self.offsets[i].abs() + self.coordinates[i].iter().map(|s| s.amplitude.abs()).sum::<f64>()
    }

    /// Scales coordinate `i`'s amplitudes so that `|q_i| ≤ limit`.
    pub fn clamp_coordinate(&mut self, i: usize, limit: f64) {
        let amp: f64 = self.coordinates[i].iter().map(|s| s.amplitude.abs()).sum();
        let room = (limit - self.offsets[i].abs()).max(0.0);
        if amp > room && amp > 0.0 {
            let k = room / amp;
            for s in &mut self.coordinates[i] {
                s.amplitude *= k;
            }
        }
    }

    /// `(q, q̇, q̈)` at time `t`.
    pub fn state(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.dof();
        let mut q = DVector::from_column_slice(&self.offsets);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        for (i, sines) in self.coordinates.iter().enumerate() {
            for s in sines {
                let w = 2.0 * PI * s.frequency;
                let (sn, cs) = (w * t + s.phase).sin_cos();
                q[i] += s.amplitude * sn;
                qd[i] += s.amplitude * w * cs;
                qdd[i] -= s.amplitude * w * w * sn;
            }
        }
        (q, qd, qdd)
    }

    /// Same frequencies and amplitudes with phases redrawn from `seed`.
    pub fn with_phases(&self, seed: u64) -> Excitation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for s in out.coordinates.iter_mut().flatten() {
            s.phase = rng.random_range(0.0..2.0 * PI);
        }
        out
    }

    /// Default excitation for a structure: three sinusoids per coordinate,
    /// angles spanning ±60°, non-harmonic frequencies in 0.1–0.6 Hz.
    pub fn default_for(structure: &Structure, seed: u64) -> Result<Excitation> {
        let model = Model::new(structure.clone());
        let n = model.dof();
        let units = model.mechanics().coordinate_units();
        let freqs = non_harmonic_frequencies(3 * n, 0.1, 0.6, seed ^ 0x5eed_f00d)?;
        let mut offsets = vec![0.0; n];
        let mut coordinates = Vec::with_capacity(n);
        for i in 0..n {
            let total = if units[i] == "rad" { 60.0_f64.to_radians() } else { 0.3 };
            let amps = [0.45 * total, 0.35 * total, 0.2 * total];
            coordinates.push(
                (0..3)
                    .map(|k| Sinusoid {
                        amplitude: amps[k],
                        frequency: freqs[3 * i + k],
                        phase: 0.0,
                    })
                    .collect(),
            );
        }
        if let Structure::TwoLinkArm(_) = structure {
            // Hang the first link roughly downward.
            offsets[0] = -PI / 2.0;
        }
        let mut exc = Excitation {
            offsets,
            coordinates,
            duration: 35.0,
            rate: 100.0,
        };
        if let Structure::PanTilt(_) = structure {
            exc.clamp_coordinate(1, PAN_TILT_TILT_LIMIT);
        }
        Ok(exc.with_phases(seed))
    }
}

/// Noiseless dataset: prescribed kinematics and exact inverse dynamics in
/// the mechanism's physical chart.
pub fn simulate_inverse(mech: &Mechanism, exc: &Excitation) -> Result<Dataset> {
    exc.validate()?;
    let model = mech.model();
    if exc.dof() != model.dof() {
        return Err(Error::DimensionMismatch {
            what: "excitation",
            expected: model.dof(),
            got: exc.dof(),
        });
    }
    if let Structure::PanTilt(_) = mech.structure {
        let b = exc.bound(1);
        if b > PAN_TILT_TILT_LIMIT + 1e-12 {
            return Err(Error::ClampViolation(format!(
                "tilt may reach {:.2}°, above the {:.0}° limit",
                b.to_degrees(),
                PAN_TILT_TILT_LIMIT.to_degrees()
            )));
        }
    }
    let count = exc.sample_count();
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 / exc.rate;
        let (q, qd, qdd) = exc.state(t);
        let tau = model.inverse_dynamics(&q, &qd, &qdd, &mech.ground_truth.values)?;
        samples.push(Sample {
            t,
            q,
            qd,
            qdd: Some(qdd),
            tau,
        });
    }
    let m = model.mechanics();
    Dataset::new(samples, 1.0 / exc.rate, PHYSICAL_CHART, m.coordinate_names(), m.coordinate_units())
}

/// Measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Covariance of additive force noise (`n × n`, PSD), in the dataset's
    /// chart.
    pub tau_cov: DMatrix<f64>,
    /// Standard deviation of force noise shaped by the true metric,
    /// `ε = σ M(q, π*)^{1/2} w` with `w` standard normal. This is what
    /// isotropic disturbances in the ambient mechanical space look like in
    /// generalized coordinates. Needs the mechanism and physical-chart data.
    pub ambient_std: f64,
    pub q_std: Vec<f64>,
    pub qd_std: Vec<f64>,
    pub qdd_std: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn zero(n: usize, seed: u64) -> Self {
        Self {
            tau_cov: DMatrix::zeros(n, n),
            ambient_std: 0.0,
            q_std: vec![0.0; n],
            qd_std: vec![0.0; n],
            qdd_std: vec![0.0; n],
            seed,
        }
    }

    /// Independent force noise with the given per-coordinate standard
    /// deviations.
    pub fn tau_diagonal(stds: &[f64], seed: u64) -> Self {
        let mut s = Self::zero(stds.len(), seed);
        s.tau_cov = DMatrix::from_diagonal(&DVector::from_iterator(stds.len(), stds.iter().map(|v| v * v)));
        s
    }

    pub fn is_zero(&self) -> bool {
        self.tau_cov.iter().all(|v| *v == 0.0)
            && self.ambient_std == 0.0
            && self.q_std.iter().chain(&self.qd_std).chain(&self.qdd_std).all(|v| *v == 0.0)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.tau_cov.nrows() != n || self.tau_cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "force noise covariance",
                expected: n,
                got: self.tau_cov.nrows(),
            });
        }
        for v in [&self.q_std, &self.qd_std, &self.qdd_std] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "kinematic noise",
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::InvalidSpec("noise standard deviations must be nonnegative".into()));
            }
        }
        if !(self.ambient_std >= 0.0) {
            return Err(Error::InvalidSpec("ambient noise level must be nonnegative".into()));
        }
        let cov = symmetrize(&self.tau_cov)?;
        let ev = sym_eigenvalues(&cov);
        let scale = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if n > 0 && ev[0] < -1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd(ev[0]));
        }
        Ok(())
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn jitter(rng: &mut ChaCha8Rng, v: &mut DVector<f64>, stds: &[f64]) {
    if stds.iter().all(|s| *s == 0.0) {
        return;
    }
    for (x, s) in v.iter_mut().zip(stds) {
        let w: f64 = rng.sample(StandardNormal);
        if *s != 0.0 {
            *x += s * w;
        }
    }
}

/// Adds force and kinematic noise. Deterministic for a fixed seed; channels
/// with zero noise are left untouched. `mechanism` is required when
/// `ambient_std > 0`.
pub fn add_noise(dataset: &Dataset, noise: &NoiseSpec, mechanism: Option<&Mechanism>) -> Result<Dataset> {
    let n = dataset.n;
    noise.validate(n)?;
    if noise.is_zero() {
        return Ok(dataset.clone());
    }
    let ambient = if noise.ambient_std > 0.0 {
        let mech = mechanism.ok_or_else(|| Error::InvalidSpec("ambient noise needs the mechanism".into()))?;
        if dataset.chart_id != PHYSICAL_CHART {
            return Err(Error::InvalidSpec("ambient noise is defined on physical-chart data".into()));
        }
        Some((mech.model(), mech.ground_truth.values.clone()))
    } else {
        None
    };
    let root = psd_sqrt(&noise.tau_cov);
    let tau_noise = noise.tau_cov.iter().any(|v| *v != 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = dataset.clone();
    for s in &mut out.samples {
        if tau_noise {
            s.tau += &root * normals(&mut rng, n);
        }
        if let Some((model, pi)) = &ambient {
            let m = model.metric(&s.q, pi)?;
            s.tau += metric_sqrt(&m)? * normals(&mut rng, n) * noise.ambient_std;
        }
        jitter(&mut rng, &mut s.q, &noise.q_std);
        jitter(&mut rng, &mut s.qd, &noise.qd_std);
        if let Some(a) = &mut s.qdd {
            jitter(&mut rng, a, &noise.qdd_std);
        }
    }
    Ok(out)
}

/// Re-expresses a dataset in the chart `q' = D q`: velocities and
/// accelerations map by `D`, forces by `D⁻ᵀ`.
pub fn rescale_chart(dataset: &Dataset, d: &DMatrix<f64>) -> Result<Dataset> {
    let n = dataset.n;
    if d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "chart map",
            expected: n,
            got: d.nrows(),
        });
    }
    let dinv_t = invert_chart(d)?.transpose();
    let mut out = dataset.clone();
    for s in &mut out.samples {
        s.q = d * &s.q;
        s.qd = d * &s.qd;
        if let Some(a) = &mut s.qdd {
            *a = d * &*a;
        }
        s.tau = &dinv_t * &s.tau;
    }
    out.chart_id = format!("{}|D{}", dataset.chart_id, chart_tag(d));
    Ok(out)
}

/// Compact text form of a chart map for labels.
pub fn chart_tag(d: &DMatrix<f64>) -> String {
    let is_diag = (0..d.nrows()).all(|i| (0..d.ncols()).all(|j| i == j || d[(i, j)] == 0.0));
    let vals: Vec<String> = if is_diag {
        d.diagonal().iter().map(|v| format!("{v}")).collect()
    } else {
        d.row_iter().map(|r| r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")).collect()
    };
    if is_diag {
        format!("diag({})", vals.join(","))
    } else {
        format!("[{}]", vals.join(";"))
    }
}

/// How downsampling picks samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DownsamplePolicy {
    /// Evenly spaced indices (start offset varied on retries).
    Uniform,
    SeededRandom(u64),
}

fn pick(dataset: &Dataset, idx: &[usize]) -> Result<Dataset> {
    Dataset::new(
        idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        dataset.dt,
        dataset.chart_id.clone(),
        dataset.coordinate_names.clone(),
        dataset.coordinate_units.clone(),
    )
}

/// Keeps `target` samples such that the stacked regressor under `model`
/// keeps the rank of the full data, retrying up to 100 times.
pub fn downsample(dataset: &Dataset, target: usize, policy: DownsamplePolicy, model: &Model) -> Result<Dataset> {
    let total = dataset.len();
    let d = model.num_params();
    if target < d {
        return Err(Error::InvalidSpec(format!("target {target} is below the parameter count {d}")));
    }
    if target >= total {
        return Ok(dataset.clone());
    }
    let full = Regression::new(model, dataset)?.rank;
    let mut best = 0;
    for attempt in 0..100u64 {
        let mut idx: Vec<usize> = match policy {
            DownsamplePolicy::Uniform => {
                let stride = total as f64 / target as f64;
                let offset = (attempt as f64 * 0.37 * stride) % stride;
                (0..target).map(|k| ((offset + k as f64 * stride) as usize).min(total - 1)).collect()
            }
            DownsamplePolicy::SeededRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
                sample_indices(&mut rng, total, target).into_vec()
            }
        };
        idx.sort_unstable();
        idx.dedup();
        let sub = pick(dataset, &idx)?;
        let r = match Regression::new(model, &sub) {
            Ok(reg) => reg.rank,
            Err(_) => 0,
        };
        if r == full {
            return Ok(sub);
        }
        best = best.max(r);
    }
    Err(Error::RankNotPreserved { full, best })
}

/// Evenly spaced subset of at most `max` samples (no rank check).
pub fn decimate(dataset: &Dataset, max: usize) -> Result<Dataset> {
    if dataset.len() <= max || max == 0 {
        return Ok(dataset.clone());
    }
    let stride = dataset.len() as f64 / max as f64;
    let idx: Vec<usize> = (0..max).map(|k| (k as f64 * stride) as usize).collect();
    pick(dataset, &idx)
}

#[cfg(test)]
mod tests;
