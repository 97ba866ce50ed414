use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualid::commands;
use dualid::config::{output_dir, parse_estimators, ExperimentConfig};
use dualid::error::{exit, CliError, Result};
use dualid_core::protocol::Profile;

#[derive(Parser)]
#[command(name = "dualid", version, about = "Coordinate-independent inverse-dynamics identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; DUALID_OUT overrides the config's choice.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train and test trajectories with a ground-truth sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit estimators to dataset files.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Training dataset CSV files.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Score estimator reports on test dataset files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Estimator report JSON files.
        #[arg(long, value_delimiter = ',', required = true)]
        reports: Vec<PathBuf>,
        /// Test dataset CSV files.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Run a reproduction profile end to end and check its criteria.
    Reproduce {
        #[command(flatten)]
        common: Common,
        /// inertia-low, inertia-high, drag-low, drag-high or invariance.
        #[arg(long)]
        profile: String,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn estimators(common: &Common) -> Result<Option<Vec<dualid_core::estimators::EstimatorKind>>> {
    common.estimators.as_deref().map(parse_estimators).transpose()
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { common } => {
            let mut cfg = load(&common)?;
            if let Some(list) = &common.estimators {
                parse_estimators(list)?;
                cfg.estimators.list = list.clone();
            }
            let out = output_dir(common.out.as_deref(), Some(&cfg));
            let manifest = commands::simulate(&cfg, &out)?;
            println!("wrote {} files to {}", manifest.artifacts.len(), out.display());
            Ok(exit::OK)
        }
        Command::Identify { common, datasets } => {
            let cfg = load(&common)?;
            let out = output_dir(common.out.as_deref(), Some(&cfg));
            let list = estimators(&common)?;
            let outcome = commands::identify(&cfg, list.as_deref(), &datasets, &out)?;
            for r in &outcome.reports {
                let status = r.solver.as_ref().map(|s| format!("{:?}", s.status)).unwrap_or_else(|| "closed-form".into());
                println!("{:<9} {status:<12} objective {:.6e}", r.kind.name(), r.objective);
            }
            Ok(if outcome.all_optimal() { exit::OK } else { exit::SOLVER })
        }
        Command::Evaluate { common, reports, datasets } => {
            let cfg = load(&common)?;
            let out = output_dir(common.out.as_deref(), Some(&cfg));
            let outcome = commands::evaluate(&cfg, &reports, &datasets, &out)?;
            for e in &outcome.evaluations {
                let cells: Vec<String> = e
                    .summary
                    .iter()
                    .map(|s| format!("{} {:.4}±{:.4}", s.coordinate, s.ncc_mean, s.ncc_std))
                    .collect();
                println!("{:<9} {}", e.estimator, cells.join("  "));
            }
            Ok(exit::OK)
        }
        Command::Reproduce { common, profile, seeds } => {
            if common.config.is_some() {
                return Err(CliError::Validation("reproduce runs built-in profiles and takes no --config".into()));
            }
            let profile = Profile::parse(&profile).ok_or_else(|| {
                let names: Vec<&str> = Profile::ALL.iter().map(|p| p.name()).collect();
                CliError::Validation(format!("unknown profile `{profile}` (expected one of {})", names.join(", ")))
            })?;
            let out = output_dir(common.out.as_deref(), None);
            let list = estimators(&common)?;
            let outcome = commands::reproduce(profile, common.seed.unwrap_or(0), seeds, list.as_deref(), &out, |seed, secs| {
                eprintln!("{} seed {seed}: {secs:.2} s", profile.name());
            })?;
            for c in &outcome.summary.criteria {
                println!("[{}] criterion {}: {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.detail);
            }
            Ok(if outcome.passed() { exit::OK } else { exit::ACCEPTANCE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
