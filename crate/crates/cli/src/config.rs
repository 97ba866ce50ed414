//! TOML experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use dualid_core::estimators::EstimatorKind;
use dualid_core::model::{Structure, TwoLinkArm};
use dualid_core::protocol::{NoiseLevels, Profile, ProfileConfig, Thinning};
use dualid_core::sdp::SdpOptions;
use dualid_core::simulate::{Excitation, Mechanism, Sinusoid};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "DUALID_OUT";

/// Seed behind the default excitation frequencies.
pub const DEFAULT_EXCITATION_SEED: u64 = 0x0e1c_17a7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub chart: Option<ChartConfig>,
    #[serde(default)]
    pub estimators: EstimatorsConfig,
    #[serde(default)]
    pub downsample: DownsampleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismConfig {
    PanTilt {
        #[serde(default = "pan_tilt_mass")]
        mass: f64,
        #[serde(default = "pan_tilt_length")]
        length: f64,
        #[serde(default)]
        gravity: bool,
    },
    Arm {
        #[serde(default = "yes")]
        gravity: bool,
    },
    Crawler {},
}

fn pan_tilt_mass() -> f64 {
    0.5
}

fn pan_tilt_length() -> f64 {
    0.3
}

fn yes() -> bool {
    true
}

impl MechanismConfig {
    pub fn build(&self) -> Result<Mechanism> {
        Ok(match self {
            MechanismConfig::PanTilt { mass, length, gravity } => Mechanism::pan_tilt(*mass, *length, *gravity)?,
            MechanismConfig::Arm { gravity } => {
                let arm = Mechanism::default_arm();
                match &arm.structure {
                    Structure::TwoLinkArm(s) if !*gravity => {
                        let s = TwoLinkArm::new(s.lengths, false);
                        Mechanism::new(Structure::TwoLinkArm(s), arm.ground_truth.values.clone())?
                    }
                    _ => arm,
                }
            }
            MechanismConfig::Crawler {} => Mechanism::default_crawler(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    /// Seed for generated frequencies.
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub rate: Option<f64>,
    pub offsets: Option<Vec<f64>>,
    /// Per coordinate, `[amplitude, frequency]` pairs.
    pub sinusoids: Option<Vec<Vec<[f64; 2]>>>,
}

impl ExcitationConfig {
    pub fn build(&self, structure: &Structure) -> Result<Excitation> {
        let mut exc = Excitation::default_for(structure, self.seed.unwrap_or(DEFAULT_EXCITATION_SEED))?;
        if let Some(d) = self.duration {
            exc.duration = d;
        }
        if let Some(r) = self.rate {
            exc.rate = r;
        }
        if let Some(o) = &self.offsets {
            exc.offsets = o.clone();
        }
        if let Some(coords) = &self.sinusoids {
            exc.coordinates = coords
                .iter()
                .map(|c| {
                    c.iter()
                        .map(|[amplitude, frequency]| Sinusoid {
                            amplitude: *amplitude,
                            frequency: *frequency,
                            phase: 0.0,
                        })
                        .collect()
                })
                .collect();
        }
        exc.validate()?;
        Ok(exc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub train: usize,
    pub test: usize,
    /// Whether held-out trajectories are noisy too.
    pub test_noise: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            train: 6,
            test: 6,
            test_noise: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub tau_std: Option<Vec<f64>>,
    #[serde(default)]
    pub ambient_std: f64,
    pub q_std: Option<Vec<f64>>,
    pub qd_std: Option<Vec<f64>>,
    pub qdd_std: Option<Vec<f64>>,
}

impl NoiseConfig {
    pub fn build(&self, n: usize) -> NoiseLevels {
        let pick = |v: &Option<Vec<f64>>| v.clone().unwrap_or_else(|| vec![0.0; n]);
        NoiseLevels {
            tau_std: pick(&self.tau_std),
            ambient_std: self.ambient_std,
            q_std: pick(&self.q_std),
            qd_std: pick(&self.qd_std),
            qdd_std: pick(&self.qdd_std),
        }
    }
}

/// Chart map `q' = D q`, given either as a diagonal or as full rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub diagonal: Option<Vec<f64>>,
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl ChartConfig {
    pub fn build(&self, n: usize) -> Result<DMatrix<f64>> {
        let d = match (&self.diagonal, &self.matrix) {
            (Some(diag), None) => {
                if diag.len() != n {
                    return Err(CliError::Validation(format!("chart diagonal needs {n} entries, got {}", diag.len())));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(diag))
            }
            (None, Some(rows)) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Validation(format!("chart matrix must be {n}×{n}")));
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
            _ => return Err(CliError::Validation("chart needs exactly one of `diagonal` or `matrix`".into())),
        };
        dualid_core::model::invert_chart(&d)?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorsConfig {
    pub list: Vec<String>,
    pub enforce_consistency: bool,
    pub rho: Option<f64>,
    pub nominal: Option<Vec<f64>>,
}

impl Default for EstimatorsConfig {
    fn default() -> Self {
        Self {
            list: EstimatorKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            enforce_consistency: true,
            rho: None,
            nominal: None,
        }
    }
}

/// Parses estimator names, rejecting unknown ones and duplicates.
pub fn parse_estimators<S: AsRef<str>>(names: &[S]) -> Result<Vec<EstimatorKind>> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref().trim();
        let kind = EstimatorKind::parse(name).ok_or_else(|| {
            let known: Vec<&str> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Validation(format!("unknown estimator `{name}` (expected one of {})", known.join(", ")))
        })?;
        if out.contains(&kind) {
            return Err(CliError::Validation(format!("estimator `{name}` listed twice")));
        }
        out.push(kind);
    }
    if out.is_empty() {
        return Err(CliError::Validation("no estimators selected".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownsampleConfig {
    /// Rank-preserving random subset of this size.
    pub target: Option<usize>,
    /// Evenly spaced subset of at most this size.
    pub decimate: Option<usize>,
}

impl DownsampleConfig {
    pub fn build(&self) -> Result<Thinning> {
        match (self.target, self.decimate) {
            (None, None) => Ok(Thinning::Full),
            (Some(t), None) => Ok(Thinning::Downsample(t)),
            (None, Some(m)) => Ok(Thinning::Decimate(m)),
            _ => Err(CliError::Validation("downsample takes `target` or `decimate`, not both".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_gap: Option<f64>,
    pub tol_feas: Option<f64>,
    pub max_iters: Option<usize>,
}

impl SolverConfig {
    pub fn build(&self) -> SdpOptions {
        let mut o = SdpOptions::default();
        if let Some(v) = self.tol_gap {
            o.tol_gap = v;
        }
        if let Some(v) = self.tol_feas {
            o.tol_feas = v;
        }
        if let Some(v) = self.max_iters {
            o.max_iters = v;
        }
        o
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Overrides the slowest excitation period (s) that sets the shift
    /// window.
    pub slowest_period: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Resolves into a pipeline configuration, validating every part.
    pub fn resolve(&self) -> Result<ProfileConfig> {
        let mechanism = self.mechanism.build()?;
        let excitation = self.excitation.build(&mechanism.structure)?;
        let n = mechanism.model().dof();
        let chart = self.chart.as_ref().map(|c| c.build(n)).transpose()?;
        let cfg = ProfileConfig {
            profile: None,
            excitation,
            train_trajectories: self.protocol.train,
            test_trajectories: self.protocol.test,
            noise: self.noise.build(n),
            test_noise: self.protocol.test_noise,
            chart,
            thinning: self.downsample.build()?,
            estimators: parse_estimators(&self.estimators.list)?,
            enforce_consistency: self.estimators.enforce_consistency,
            nominal: self.estimators.nominal.as_ref().map(|v| DVector::from_column_slice(v)),
            rho: self.estimators.rho,
            solver: self.solver.build(),
            seed: self.seed,
            mechanism,
        };
        if let Some(rho) = cfg.rho {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(CliError::Validation(format!("rho must be positive and finite, got {rho}")));
            }
        }
        if let Some(p) = self.evaluation.slowest_period {
            if !(p.is_finite() && p > 0.0) {
                return Err(CliError::Validation(format!("slowest_period must be positive, got {p}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn slowest_period(&self, cfg: &ProfileConfig) -> f64 {
        self.evaluation.slowest_period.unwrap_or_else(|| cfg.excitation.slowest_period())
    }
}

/// Output directory: the flag, then the environment override, then the
/// config, then `out`.
pub fn output_dir(flag: Option<&Path>, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.and_then(|c| c.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

/// A profile's default pipeline, optionally with a restricted estimator
/// list.
pub fn profile_config(profile: Profile, seed: u64, estimators: Option<&[EstimatorKind]>) -> Result<ProfileConfig> {
    let mut cfg = ProfileConfig::default_for(profile, seed)?;
    if let Some(list) = estimators {
        cfg.estimators = list.to_vec();
    }
    Ok(cfg)
}
