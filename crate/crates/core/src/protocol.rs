//! The reproduction pipeline: simulate train and test trajectories, add
//! noise, move to a rescaled chart, downsample, fit every estimator and
//! score forward-dynamics predictions on held-out trajectories.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::estimators::{fit, EstimatorKind, EstimatorReport, EstimatorSpec, Regression};
use crate::evaluate::{evaluate, identifiable_projection, invariance_probe, parameter_errors, EvalReport, InvarianceRow};
use crate::model::{Dataset, DynamicParams, Model};
use crate::sdp::SdpOptions;
use crate::simulate::{
    add_noise, decimate, downsample, rescale_chart, simulate_inverse, DownsamplePolicy, Excitation, Mechanism, NoiseSpec,
};

/// Named end-to-end runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Profile {
    InertiaLow,
    InertiaHigh,
    DragLow,
    DragHigh,
    Invariance,
}

impl Profile {
    pub const ALL: [Profile; 5] = [
        Profile::InertiaLow,
        Profile::InertiaHigh,
        Profile::DragLow,
        Profile::DragHigh,
        Profile::Invariance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Profile::InertiaLow => "inertia-low",
            Profile::InertiaHigh => "inertia-high",
            Profile::DragLow => "drag-low",
            Profile::DragHigh => "drag-high",
            Profile::Invariance => "invariance",
        }
    }

    pub fn parse(name: &str) -> Option<Profile> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn is_drag(&self) -> bool {
        matches!(self, Profile::DragLow | Profile::DragHigh)
    }
}

/// Noise magnitudes, applied in the mechanism's physical chart.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseLevels {
    /// Per-coordinate standard deviation of independent force noise.
    pub tau_std: Vec<f64>,
    /// Level of metric-shaped force noise.
    pub ambient_std: f64,
    pub q_std: Vec<f64>,
    pub qd_std: Vec<f64>,
    pub qdd_std: Vec<f64>,
}

impl NoiseLevels {
    pub fn none(n: usize) -> Self {
        Self {
            tau_std: vec![0.0; n],
            ambient_std: 0.0,
            q_std: vec![0.0; n],
            qd_std: vec![0.0; n],
            qdd_std: vec![0.0; n],
        }
    }

    /// Force noise whose standard deviation grows geometrically from `low`
    /// on the first coordinate to `ratio · low` on the last.
    pub fn anisotropic(n: usize, low: f64, ratio: f64) -> Vec<f64> {
        if n == 1 {
            return vec![low];
        }
        (0..n).map(|i| low * ratio.powf(i as f64 / (n - 1) as f64)).collect()
    }

    pub fn spec(&self, seed: u64) -> NoiseSpec {
        let n = self.tau_std.len();
        NoiseSpec {
            tau_cov: DMatrix::from_diagonal(&DVector::from_iterator(n, self.tau_std.iter().map(|s| s * s))),
            ambient_std: self.ambient_std,
            q_std: self.q_std.clone(),
            qd_std: self.qd_std.clone(),
            qdd_std: self.qdd_std.clone(),
            seed,
        }
    }
}

/// How the training set is thinned.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Thinning {
    /// Rank-preserving downsample to this many samples.
    Downsample(usize),
    /// Evenly spaced subset of at most this many samples.
    Decimate(usize),
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    /// `None` for user-assembled configurations.
    pub profile: Option<Profile>,
    pub mechanism: Mechanism,
    /// Frequencies and amplitudes; phases are redrawn per trajectory.
    pub excitation: Excitation,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub noise: NoiseLevels,
    /// Whether held-out trajectories carry the same noise.
    pub test_noise: bool,
    /// Chart `q' = D q` the identification runs in.
    pub chart: Option<DMatrix<f64>>,
    pub thinning: Thinning,
    pub estimators: Vec<EstimatorKind>,
    pub enforce_consistency: bool,
    /// Prior for the regularized estimators; defaults to the structure's
    /// reference parameters.
    pub nominal: Option<DVector<f64>>,
    pub rho: Option<f64>,
    pub solver: SdpOptions,
    pub seed: u64,
}

/// Chart `diag(1000, 1, …)`.
pub fn headline_chart(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::identity(n, n);
    d[(0, 0)] = 1000.0;
    d
}

impl ProfileConfig {
    /// Defaults for each profile: 6 train and 6 test trajectories of 35 s
    /// at 100 Hz, metric-shaped plus 1:10 anisotropic force noise, the
    /// `diag(1000, 1, …)` chart and all six estimators with physical
    /// consistency enforced.
    pub fn default_for(profile: Profile, seed: u64) -> Result<Self> {
        let mechanism = if profile.is_drag() {
            Mechanism::default_crawler()
        } else {
            Mechanism::default_arm()
        };
        let excitation = Excitation::default_for(&mechanism.structure, 0x0e1c_17a7)?;
        let n = excitation.dof();
        let (noise, thinning) = match profile {
            Profile::InertiaLow | Profile::InertiaHigh => {
                let mut noise = NoiseLevels::none(n);
                noise.ambient_std = 0.5;
                noise.tau_std = NoiseLevels::anisotropic(n, 0.05, 10.0);
                let thin = if profile == Profile::InertiaLow {
                    Thinning::Downsample(20)
                } else {
                    Thinning::Decimate(500)
                };
                (noise, thin)
            }
            Profile::DragLow | Profile::DragHigh => {
                let mut noise = NoiseLevels::none(n);
                noise.ambient_std = 0.3;
                noise.tau_std = NoiseLevels::anisotropic(n, 0.02, 10.0);
                let thin = if profile == Profile::DragLow {
                    Thinning::Downsample(40)
                } else {
                    Thinning::Decimate(500)
                };
                (noise, thin)
            }
            Profile::Invariance => {
                let mut noise = NoiseLevels::none(n);
                noise.tau_std = NoiseLevels::anisotropic(n, 0.2, 10.0);
                (noise, Thinning::Downsample(20))
            }
        };
        Ok(Self {
            profile: Some(profile),
            mechanism,
            excitation,
            train_trajectories: 6,
            test_trajectories: 6,
            noise,
            test_noise: true,
            chart: (profile != Profile::Invariance).then(|| headline_chart(n)),
            thinning,
            estimators: EstimatorKind::ALL.to_vec(),
            enforce_consistency: profile != Profile::Invariance,
            nominal: None,
            rho: None,
            solver: SdpOptions::default(),
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.excitation.validate()?;
        let n = self.mechanism.model().dof();
        if self.excitation.dof() != n {
            return Err(Error::InvalidSpec(format!("excitation has {} coordinates, mechanism {n}", self.excitation.dof())));
        }
        if self.train_trajectories == 0 || self.test_trajectories == 0 {
            return Err(Error::InvalidSpec("need at least one train and one test trajectory".into()));
        }
        let lens = [&self.noise.tau_std, &self.noise.q_std, &self.noise.qd_std, &self.noise.qdd_std];
        if lens.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidSpec(format!("noise levels need {n} entries per channel")));
        }
        if let Some(d) = &self.chart {
            if d.nrows() != n || d.ncols() != n {
                return Err(Error::InvalidSpec(format!("chart must be {n}×{n}")));
            }
            crate::model::invert_chart(d)?;
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidSpec("no estimators selected".into()));
        }
        if let Some(p) = &self.nominal {
            if p.len() != self.mechanism.ground_truth.len() {
                return Err(Error::InvalidSpec("nominal has the wrong length".into()));
            }
        }
        Ok(())
    }

    /// The model in the identification chart.
    pub fn model(&self) -> Result<Model> {
        match &self.chart {
            Some(d) => Model::with_chart(self.mechanism.structure.clone(), d.clone()),
            None => Ok(self.mechanism.model()),
        }
    }

    pub fn nominal_params(&self) -> Result<DynamicParams> {
        let model = self.mechanism.model();
        let values = self.nominal.clone().unwrap_or_else(|| model.mechanics().reference_params());
        DynamicParams::new(values, model.layout())
    }
}

/// Deterministic per-stream seeds.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const PHASE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const THIN_STREAM: u64 = 3;
const CHART_STREAM: u64 = 4;

/// Simulated trajectories in the identification chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub train: Vec<Dataset>,
    pub test: Vec<Dataset>,
}

/// Simulates, perturbs and re-charts every trajectory.
pub fn generate(config: &ProfileConfig) -> Result<Generated> {
    config.validate()?;
    let total = config.train_trajectories + config.test_trajectories;
    let mut train = Vec::with_capacity(config.train_trajectories);
    let mut test = Vec::with_capacity(config.test_trajectories);
    for k in 0..total {
        let exc = config.excitation.with_phases(derive_seed(config.seed, PHASE_STREAM, k as u64));
        let clean = simulate_inverse(&config.mechanism, &exc)?;
        let is_test = k >= config.train_trajectories;
        let data = if is_test && !config.test_noise {
            clean
        } else {
            add_noise(&clean, &config.noise.spec(derive_seed(config.seed, NOISE_STREAM, k as u64)), Some(&config.mechanism))?
        };
        let data = match &config.chart {
            Some(d) => rescale_chart(&data, d)?,
            None => data,
        };
        if is_test {
            test.push(data);
        } else {
            train.push(data);
        }
    }
    Ok(Generated { train, test })
}

/// The training set after thinning.
pub fn training_set(config: &ProfileConfig, generated: &Generated, model: &Model) -> Result<Dataset> {
    let all = Dataset::concat(&generated.train)?;
    match config.thinning {
        Thinning::Full => Ok(all),
        Thinning::Decimate(max) => decimate(&all, max),
        Thinning::Downsample(target) => downsample(&all, target, DownsamplePolicy::SeededRandom(derive_seed(config.seed, THIN_STREAM, 0)), model),
    }
}

/// Everything produced by one profile run.
#[derive(Debug, Clone)]
pub struct ProfileRun {
    pub profile: Option<Profile>,
    pub seed: u64,
    pub model: Model,
    pub regression: Regression,
    pub training_samples: usize,
    pub reports: Vec<EstimatorReport>,
    pub evaluations: Vec<EvalReport>,
}

impl ProfileRun {
    pub fn report(&self, kind: EstimatorKind) -> Option<&EstimatorReport> {
        self.reports.iter().find(|r| r.kind == kind)
    }

    pub fn evaluation(&self, kind: EstimatorKind) -> Option<&EvalReport> {
        self.evaluations.iter().find(|e| e.estimator == kind.name())
    }

    /// Mean NCC over the structure's shape coordinates.
    pub fn shape_ncc(&self, kind: EstimatorKind) -> Option<f64> {
        let shape = self.model.mechanics().shape_coordinates();
        self.evaluation(kind).map(|e| e.mean_ncc(&shape))
    }
}

pub fn spec_for(config: &ProfileConfig, kind: EstimatorKind) -> Result<EstimatorSpec> {
    let mut spec = EstimatorSpec::new(kind).constrained(config.enforce_consistency);
    spec.solver = config.solver.clone();
    if matches!(kind, EstimatorKind::RegBregman | EstimatorKind::RegPullback) {
        spec = spec.with_nominal(config.nominal_params()?);
        spec.rho = config.rho;
    }
    Ok(spec)
}

/// Fits every configured estimator on the thinned training set and scores
/// each on the test trajectories.
pub fn run_profile(config: &ProfileConfig) -> Result<ProfileRun> {
    let generated = generate(config)?;
    run_on(config, &generated)
}

/// [`run_profile`] on already generated data.
pub fn run_on(config: &ProfileConfig, generated: &Generated) -> Result<ProfileRun> {
    let model = config.model()?;
    let train = training_set(config, generated, &model)?;
    let regression = Regression::new(&model, &train)?;
    let projector = identifiable_projection(&regression);
    let truth = &config.mechanism.ground_truth.values;
    let mut reports = Vec::with_capacity(config.estimators.len());
    let mut evaluations = Vec::with_capacity(config.estimators.len());
    for &kind in &config.estimators {
        let report = fit(&regression, &spec_for(config, kind)?)?;
        let mut eval = evaluate(kind.name(), &model, &report.pi_hat.values, &generated.test, config.excitation.slowest_period())?;
        eval.parameter_errors = Some(parameter_errors(&projector, &report.pi_hat.values, truth));
        reports.push(report);
        evaluations.push(eval);
    }
    Ok(ProfileRun {
        profile: config.profile,
        seed: config.seed,
        model,
        training_samples: train.len(),
        regression,
        reports,
        evaluations,
    })
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionOutcome {
    pub fn new(id: u32, name: &str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Slack tightness on a run: every dual-metric slack within
/// `1e-6 · max(1, s)` of `rᵀ M⁻¹ r`.
pub fn check_schur_tightness(run: &ProfileRun) -> Option<(bool, f64)> {
    let t = run.report(EstimatorKind::DualMetric)?.schur_tightness?;
    Some((t <= 1e-6, t))
}

/// Largest violation `margin − λ_min` over every constraint block, for
/// every constrained report in a run.
pub fn worst_violation(reg: &Regression, pi: &DVector<f64>) -> f64 {
    reg.constraints
        .iter()
        .map(|c| c.margin - c.min_eigenvalue(pi))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Per-baseline tallies for the trend comparison on shape coordinates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrendTally {
    pub baseline: EstimatorKind,
    /// Seeds on which the dual-metric fit scored at least as well.
    pub wins: usize,
    pub seeds: usize,
    pub dm_mean: f64,
    pub baseline_mean: f64,
}

impl TrendTally {
    pub fn holds(&self, min_wins: usize) -> bool {
        self.wins >= min_wins && self.dm_mean >= self.baseline_mean
    }
}

/// Compares the dual-metric shape-coordinate NCC against every other
/// estimator across runs of the same profile.
pub fn trend_tallies(runs: &[ProfileRun]) -> Vec<TrendTally> {
    let Some(first) = runs.first() else { return Vec::new() };
    let baselines: Vec<EstimatorKind> = first
        .reports
        .iter()
        .map(|r| r.kind)
        .filter(|k| *k != EstimatorKind::DualMetric)
        .collect();
    let dm: Vec<f64> = runs.iter().map(|r| r.shape_ncc(EstimatorKind::DualMetric).unwrap_or(f64::NAN)).collect();
    let dm_mean = dm.iter().sum::<f64>() / dm.len() as f64;
    baselines
        .into_iter()
        .map(|b| {
            let other: Vec<f64> = runs.iter().map(|r| r.shape_ncc(b).unwrap_or(f64::NAN)).collect();
            TrendTally {
                baseline: b,
                wins: dm.iter().zip(&other).filter(|(d, o)| *d >= *o).count(),
                seeds: runs.len(),
                dm_mean,
                baseline_mean: other.iter().sum::<f64>() / other.len() as f64,
            }
        })
        .collect()
}

/// Chart-invariance of one seed: the dual-metric fit under every probe
/// chart and ordinary least squares under the headline chart.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InvarianceOutcome {
    pub seed: u64,
    pub dual_metric: Vec<InvarianceRow>,
    pub ols: Vec<InvarianceRow>,
}

impl InvarianceOutcome {
    pub fn dm_max_shift(&self) -> f64 {
        self.dual_metric.iter().map(|r| r.pi_shift).fold(0.0, f64::max)
    }

    /// OLS shift under `diag(1000, 1, …)`.
    pub fn ols_headline_shift(&self) -> f64 {
        self.ols.first().map(|r| r.pi_shift).unwrap_or(f64::NAN)
    }
}

/// Number of chart maps in an invariance probe.
pub const PROBE_CHARTS: usize = 10;

/// Builds the training regression in the configured chart and probes it.
pub fn run_invariance(config: &ProfileConfig) -> Result<InvarianceOutcome> {
    let generated = generate(config)?;
    let model = config.model()?;
    let train = training_set(config, &generated, &model)?;
    let reg = Regression::new(&model, &train)?;
    let charts = probe_charts(model.dof(), PROBE_CHARTS, derive_seed(config.seed, CHART_STREAM, 0));
    let dm = invariance_probe(&reg, &spec_for(config, EstimatorKind::DualMetric)?, &charts)?;
    let ols = invariance_probe(&reg, &spec_for(config, EstimatorKind::Ols)?, &charts[..1])?;
    Ok(InvarianceOutcome {
        seed: config.seed,
        dual_metric: dm,
        ols,
    })
}

/// Random invertible chart maps, `diag(1000, 1, …)` first.
pub fn probe_charts(n: usize, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![headline_chart(n)];
    while out.len() < count {
        // Random scales and a random mixing well away from singular.
        let scales = DVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-1.0..1.0)));
        let mix = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5)) + DMatrix::identity(n, n);
        let d = DMatrix::from_diagonal(&scales) * mix;
        if crate::model::chart_condition(&d) < 1e4 {
            out.push(d);
        }
    }
    out
}
