//! The four commands. Each writes into an [`OutDir`] and finishes with a
//! manifest; nothing written depends on wall-clock time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dualid_core::estimators::{fit, EstimatorKind, EstimatorReport, Regression};
use dualid_core::evaluate::{evaluate as score, identifiable_projection, parameter_errors, EvalReport};
use dualid_core::model::{Dataset, Model};
use dualid_core::protocol::{
    check_schur_tightness, generate, run_invariance, spec_for, training_set, trend_tallies, worst_violation, CriterionOutcome,
    Generated, InvarianceOutcome, Profile, ProfileConfig, ProfileRun, TrendTally,
};
use dualid_core::simulate::{chart_tag, PHYSICAL_CHART};
use serde::{Deserialize, Serialize};

use crate::config::{profile_config, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::io::{read_dataset, read_json, DatasetMeta, Manifest, OutDir, ParameterValue, Sidecar};

pub const SIDECAR: &str = "ground_truth.json";

/// Per-profile time budget for one seed.
pub const PROFILE_BUDGET_SECS: f64 = 60.0;

fn meta_for(cfg: &ProfileConfig, model: &Model) -> DatasetMeta {
    let m = model.mechanics();
    DatasetMeta {
        chart_id: match &cfg.chart {
            Some(d) => format!("{PHYSICAL_CHART}|D{}", chart_tag(d)),
            None => PHYSICAL_CHART.to_string(),
        },
        coordinate_names: m.coordinate_names(),
        coordinate_units: m.coordinate_units(),
        dt: Some(1.0 / cfg.excitation.rate),
    }
}

fn trajectory_name(split: &str, k: usize) -> String {
    format!("{split}_{k:02}.csv")
}

/// Simulates the configured train and test trajectories.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let pc = cfg.resolve()?;
    let generated = generate(&pc).map_err(|e| CliError::from(e).at("simulate"))?;
    let mut dir = OutDir::create(out)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, ds) in generated.train.iter().enumerate() {
        let name = trajectory_name("train", k);
        dir.write(&name, &crate::io::dataset_to_csv(ds)?)?;
        train.push(name);
    }
    for (k, ds) in generated.test.iter().enumerate() {
        let name = trajectory_name("test", k);
        dir.write(&name, &crate::io::dataset_to_csv(ds)?)?;
        test.push(name);
    }
    let physical = pc.mechanism.model();
    let sidecar = Sidecar {
        mechanism: cfg.mechanism.clone(),
        parameters: physical
            .layout()
            .entries
            .iter()
            .zip(pc.mechanism.ground_truth.values.iter())
            .map(|(e, v)| ParameterValue {
                name: e.name.clone(),
                unit: e.unit.clone(),
                value: *v,
            })
            .collect(),
        chart_id: generated.train[0].chart_id.clone(),
        chart: pc.chart.as_ref().map(|d| d.row_iter().map(|r| r.iter().copied().collect()).collect()),
        coordinate_names: generated.train[0].coordinate_names.clone(),
        coordinate_units: generated.train[0].coordinate_units.clone(),
        dt: generated.train[0].dt,
        slowest_period: cfg.slowest_period(&pc),
        seed: pc.seed,
        train,
        test,
    };
    dir.write_json(SIDECAR, &sidecar)?;
    dir.finish("simulate")
}

fn load_datasets(cfg: &ProfileConfig, model: &Model, paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    if paths.is_empty() {
        return Err(CliError::Validation("no dataset files given".into()));
    }
    let meta = meta_for(cfg, model);
    paths.iter().map(|p| read_dataset(p, &meta)).collect()
}

pub struct IdentifyOutcome {
    pub reports: Vec<EstimatorReport>,
    pub manifest: Manifest,
}

impl IdentifyOutcome {
    pub fn all_optimal(&self) -> bool {
        self.reports.iter().all(EstimatorReport::is_optimal)
    }
}

fn report_name(kind: EstimatorKind) -> String {
    format!("reports/{}.json", kind.name())
}

/// Fits every configured estimator on the concatenated, thinned datasets.
pub fn identify(cfg: &ExperimentConfig, estimators: Option<&[EstimatorKind]>, datasets: &[PathBuf], out: &Path) -> Result<IdentifyOutcome> {
    let mut pc = cfg.resolve()?;
    if let Some(list) = estimators {
        pc.estimators = list.to_vec();
    }
    let model = pc.model()?;
    let parts = load_datasets(&pc, &model, datasets)?;
    let generated = Generated {
        train: parts,
        test: Vec::new(),
    };
    let train = training_set(&pc, &generated, &model).map_err(|e| CliError::from(e).at("downsample"))?;
    let reg = Regression::new(&model, &train)?;
    let mut dir = OutDir::create(out)?;
    let mut reports = Vec::with_capacity(pc.estimators.len());
    for &kind in &pc.estimators {
        let report = fit(&reg, &spec_for(&pc, kind)?).map_err(|e| CliError::from(e).at("identify"))?;
        dir.write_json(&report_name(kind), &report)?;
        reports.push(report);
    }
    let manifest = dir.finish("identify")?;
    Ok(IdentifyOutcome { reports, manifest })
}

/// Flat per-trajectory table, one row per estimator, coordinate and
/// trajectory.
pub fn eval_table(evals: &[EvalReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Validation(format!("csv: {e}"));
    w.write_record(["estimator", "coordinate", "trajectory", "ncc", "shift", "rmse", "degenerate", "excluded_samples"])
        .map_err(csv_err)?;
    for e in evals {
        for t in &e.trajectories {
            for c in &t.coordinates {
                w.write_record([
                    e.estimator.clone(),
                    c.coordinate.clone(),
                    t.trajectory.to_string(),
                    format!("{:?}", c.ncc),
                    c.shift.to_string(),
                    format!("{:?}", c.rmse),
                    c.degenerate.to_string(),
                    t.excluded_samples.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| CliError::Validation(format!("csv: {e}")))
}

/// Mean ± std over test trajectories, one row per estimator and coordinate.
pub fn summary_table(evals: &[EvalReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Validation(format!("csv: {e}"));
    w.write_record(["estimator", "coordinate", "ncc_mean", "ncc_std", "rmse_mean", "rmse_std"]).map_err(csv_err)?;
    for e in evals {
        for s in &e.summary {
            w.write_record([
                e.estimator.clone(),
                s.coordinate.clone(),
                format!("{:?}", s.ncc_mean),
                format!("{:?}", s.ncc_std),
                format!("{:?}", s.rmse_mean),
                format!("{:?}", s.rmse_std),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Validation(format!("csv: {e}")))
}

pub struct EvaluateOutcome {
    pub evaluations: Vec<EvalReport>,
    pub manifest: Manifest,
}

/// Scores estimator reports on test datasets.
pub fn evaluate(cfg: &ExperimentConfig, reports: &[PathBuf], datasets: &[PathBuf], out: &Path) -> Result<EvaluateOutcome> {
    let pc = cfg.resolve()?;
    let model = pc.model()?;
    if reports.is_empty() {
        return Err(CliError::Validation("no estimator reports given".into()));
    }
    let tests = load_datasets(&pc, &model, datasets)?;
    let layout = model.layout();
    let mut dir = OutDir::create(out)?;
    let mut evaluations = Vec::with_capacity(reports.len());
    for path in reports {
        let report: EstimatorReport = read_json(path)?;
        if report.pi_hat.layout != layout {
            return Err(CliError::Validation(format!(
                "{}: parameter layout does not match the configured mechanism",
                path.display()
            )));
        }
        let eval = score(report.kind.name(), &model, &report.pi_hat.values, &tests, cfg.slowest_period(&pc))
            .map_err(|e| CliError::from(e).at("evaluate"))?;
        dir.write_json(&format!("eval/{}.json", report.kind.name()), &eval)?;
        evaluations.push(eval);
    }
    dir.write("eval.csv", &eval_table(&evaluations)?)?;
    dir.write("summary.csv", &summary_table(&evaluations)?)?;
    let manifest = dir.finish("evaluate")?;
    Ok(EvaluateOutcome { evaluations, manifest })
}

/// Per-seed digest kept in the reproduce summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDigest {
    pub seed: u64,
    pub training_samples: usize,
    pub schur_tightness: Option<f64>,
    pub worst_violation: f64,
    /// Mean shape-coordinate NCC per estimator, in run order.
    pub shape_ncc: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub profile: String,
    pub seeds: Vec<u64>,
    pub criteria: Vec<CriterionOutcome>,
    pub trend: Vec<TrendTally>,
    pub runs: Vec<SeedDigest>,
    pub invariance: Vec<InvarianceOutcome>,
}

pub struct ReproduceOutcome {
    pub summary: ReproduceSummary,
    /// Wall-clock seconds per seed; reported, never written.
    pub seconds: Vec<f64>,
    pub manifest: Manifest,
}

impl ReproduceOutcome {
    pub fn passed(&self) -> bool {
        self.summary.criteria.iter().all(|c| c.passed)
    }
}

/// One seed of a prediction profile, stage by stage.
pub fn run_stages(pc: &ProfileConfig) -> Result<ProfileRun> {
    let generated = generate(pc).map_err(|e| CliError::from(e).at("simulate"))?;
    let model = pc.model()?;
    let train = training_set(pc, &generated, &model).map_err(|e| CliError::from(e).at("downsample"))?;
    let regression = Regression::new(&model, &train).map_err(|e| CliError::from(e).at("identify"))?;
    let projector = identifiable_projection(&regression);
    let truth = &pc.mechanism.ground_truth.values;
    let mut reports = Vec::with_capacity(pc.estimators.len());
    let mut evaluations = Vec::with_capacity(pc.estimators.len());
    for &kind in &pc.estimators {
        let report = fit(&regression, &spec_for(pc, kind)?).map_err(|e| CliError::from(e).at("identify"))?;
        let mut eval = score(kind.name(), &model, &report.pi_hat.values, &generated.test, pc.excitation.slowest_period())
            .map_err(|e| CliError::from(e).at("evaluate"))?;
        eval.parameter_errors = Some(parameter_errors(&projector, &report.pi_hat.values, truth));
        reports.push(report);
        evaluations.push(eval);
    }
    Ok(ProfileRun {
        profile: pc.profile,
        seed: pc.seed,
        model,
        training_samples: train.len(),
        regression,
        reports,
        evaluations,
    })
}

fn ceil_fraction(count: usize, num: usize, den: usize) -> usize {
    (count * num).div_ceil(den)
}

/// Runs a profile over `seeds` consecutive seeds from `base_seed` and
/// checks the criteria that profile speaks to.
pub fn reproduce(
    profile: Profile,
    base_seed: u64,
    seeds: usize,
    estimators: Option<&[EstimatorKind]>,
    out: &Path,
    mut progress: impl FnMut(u64, f64),
) -> Result<ReproduceOutcome> {
    if seeds == 0 {
        return Err(CliError::Validation("need at least one seed".into()));
    }
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| base_seed + k).collect();
    let mut dir = OutDir::create(out)?;
    let prefix = profile.name();
    let mut seconds = Vec::with_capacity(seeds);
    let mut criteria = Vec::new();
    let mut runs = Vec::new();
    let mut digests = Vec::new();
    let mut invariance = Vec::new();
    let mut trend = Vec::new();

    if profile == Profile::Invariance {
        for &seed in &seed_list {
            let pc = profile_config(profile, seed, estimators)?;
            let start = Instant::now();
            let o = run_invariance(&pc).map_err(|e| CliError::from(e).at("identify"))?;
            let secs = start.elapsed().as_secs_f64();
            progress(seed, secs);
            seconds.push(secs);
            dir.write_json(&format!("{prefix}/seed_{seed:03}/invariance.json"), &o)?;
            invariance.push(o);
        }
        let dm_max = invariance.iter().map(|o| o.dm_max_shift()).fold(0.0, f64::max);
        let witnesses = invariance.iter().filter(|o| o.ols_headline_shift() > 1e-2).count();
        let need = ceil_fraction(seeds, 45, 50);
        criteria.push(CriterionOutcome::new(
            3,
            "coordinate independence",
            dm_max <= 1e-6 && witnesses >= need,
            format!("dm max relative shift {dm_max:.3e} (≤ 1e-6); ols shift > 1e-2 on {witnesses}/{seeds} seeds (need {need})"),
        ));
    } else {
        for &seed in &seed_list {
            let pc = profile_config(profile, seed, estimators)?;
            let start = Instant::now();
            let run = run_stages(&pc)?;
            let secs = start.elapsed().as_secs_f64();
            progress(seed, secs);
            seconds.push(secs);
            let base = format!("{prefix}/seed_{seed:03}");
            for (report, eval) in run.reports.iter().zip(&run.evaluations) {
                dir.write_json(&format!("{base}/reports/{}.json", report.kind.name()), report)?;
                dir.write_json(&format!("{base}/eval/{}.json", report.kind.name()), eval)?;
            }
            dir.write(&format!("{base}/eval.csv"), &eval_table(&run.evaluations)?)?;
            dir.write(&format!("{base}/summary.csv"), &summary_table(&run.evaluations)?)?;
            let violation = run
                .reports
                .iter()
                .map(|r| worst_violation(&run.regression, &r.pi_hat.values))
                .fold(f64::NEG_INFINITY, f64::max);
            digests.push(SeedDigest {
                seed,
                training_samples: run.training_samples,
                schur_tightness: run.report(EstimatorKind::DualMetric).and_then(|r| r.schur_tightness),
                worst_violation: violation,
                shape_ncc: run
                    .reports
                    .iter()
                    .map(|r| (r.kind.name().to_string(), run.shape_ncc(r.kind).unwrap_or(f64::NAN)))
                    .collect(),
            });
            runs.push(run);
        }
        if runs[0].report(EstimatorKind::DualMetric).is_some() {
            let tight: Vec<(bool, f64)> = runs.iter().filter_map(check_schur_tightness).collect();
            let worst = tight.iter().map(|t| t.1).fold(0.0, f64::max);
            let slowest = seconds.iter().copied().fold(0.0, f64::max);
            criteria.push(CriterionOutcome::new(
                1,
                "schur tightness",
                tight.len() == runs.len() && tight.iter().all(|t| t.0) && slowest < PROFILE_BUDGET_SECS,
                format!("max |s - r'M^-1 r| / max(1, s) = {worst:.3e} over {} seeds (≤ 1e-6)", runs.len()),
            ));
        }
        let tallies = trend_tallies(&runs);
        if runs[0].report(EstimatorKind::DualMetric).is_some() && !tallies.is_empty() {
            let need = ceil_fraction(seeds, 40, 50);
            let failing: Vec<&str> = tallies.iter().filter(|t| !t.holds(need)).map(|t| t.baseline.name()).collect();
            let weakest = tallies.iter().map(|t| t.wins).min().unwrap_or(0);
            criteria.push(CriterionOutcome::new(
                5,
                "trend reproduction",
                failing.is_empty(),
                format!(
                    "dm mean shape ncc {:.4}; fewest seed wins {weakest}/{seeds} (need {need}); failing baselines: {}",
                    tallies[0].dm_mean,
                    if failing.is_empty() { "none".to_string() } else { failing.join(",") }
                ),
            ));
        }
        if profile_config(profile, base_seed, estimators)?.enforce_consistency {
            let worst = digests.iter().map(|d| d.worst_violation).fold(f64::NEG_INFINITY, f64::max);
            criteria.push(CriterionOutcome::new(
                7,
                "physical consistency",
                worst <= 1e-8,
                format!("worst margin − λ_min {worst:.3e} (≤ 1e-8; negative means slack)"),
            ));
        }
        trend = tallies;
    }
    let summary = ReproduceSummary {
        profile: prefix.to_string(),
        seeds: seed_list,
        criteria,
        trend,
        runs: digests,
        invariance,
    };
    dir.write_json(&format!("{prefix}/summary.json"), &summary)?;
    let manifest = dir.finish("reproduce")?;
    Ok(ReproduceOutcome { summary, seconds, manifest })
}
