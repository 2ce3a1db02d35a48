use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use miloc::calib::{model_residuals, split_odd_even};
use miloc::harness::io::{self, CalibrationFile};
use miloc::harness::{self, CalibrationMode, HarnessError, Scenario, ScenarioConfig};
use miloc::model::{Anchor, ChannelVector, CoilSpec};
use miloc::stats::EmpiricalCdf;

/// Magneto-inductive 3D localization toolkit.
///
/// Every subcommand writes its files to --out-dir and prints a JSON summary
/// on stdout. Failures print {"error": {"kind", "message"}} on stderr and
/// exit with status 1 (2 for usage errors).
#[derive(Parser)]
#[command(name = "miloc", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; the built-in default scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Thin-wire synthesis of the scenario deployments -> measurements.csv.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrates on the even-indexed deployments -> calibration.json.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        measurements: PathBuf,
        /// Defaults to the scenario setting.
        #[arg(long, value_parser = parse_mode)]
        calibration: Option<CalibrationMode>,
    },
    /// WLS localization of every measurement row -> results.csv.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        measurements: PathBuf,
        /// Uncalibrated installed anchors when omitted.
        #[arg(long)]
        calibration_file: Option<PathBuf>,
    },
    /// Error CDFs and quantiles of a results table -> cdf.csv, summary.json.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Position error bound over the scenario deployments -> peb.csv.
    Peb {
        #[command(flatten)]
        common: Common,
        /// Noise case 1 to 6; the scenario's case list when omitted.
        #[arg(long = "case")]
        case: Option<u8>,
        /// Uncalibrated installed anchors when omitted.
        #[arg(long)]
        calibration_file: Option<PathBuf>,
        /// Samples for cases 1 to 4: model residuals of the odd-indexed
        /// rows (cases 1, 4) or raw channel vectors (cases 2, 3).
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// synthesize -> calibrate -> localize -> evaluate -> peb.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Defaults to the scenario setting.
        #[arg(long, value_parser = parse_mode)]
        calibration: Option<CalibrationMode>,
    },
}

fn parse_mode(s: &str) -> Result<CalibrationMode, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn load_scenario(common: &Common) -> Result<Scenario, HarnessError> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Scenario::from_config(&config)
}

fn prepare_out_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))
}

fn anchors_for(scenario: &Scenario, file: Option<&Path>) -> Result<Vec<Anchor>, HarnessError> {
    match file {
        Some(path) => {
            let coils: Vec<CoilSpec> = scenario.anchors.iter().map(|a| a.coil).collect();
            CalibrationFile::load(path)?.to_anchors(&coils)
        }
        None => Ok(scenario.anchors.clone()),
    }
}

fn run(command: Command) -> Result<serde_json::Value, HarnessError> {
    match command {
        Command::Synthesize { common } => {
            let scenario = load_scenario(&common)?;
            prepare_out_dir(&common.out_dir)?;
            let deployments = harness::synthesize(&scenario)?;
            let path = common.out_dir.join("measurements.csv");
            io::save_measurements(&path, &deployments)?;
            Ok(json!({ "deployments": deployments.len(), "measurements": path }))
        }
        Command::Calibrate {
            common,
            measurements,
            calibration,
        } => {
            let scenario = load_scenario(&common)?;
            let mode = calibration.unwrap_or(scenario.calibration.mode);
            let deployments = io::load_measurements(&measurements)?;
            let split = split_odd_even(&deployments)?;
            let outcome = harness::calibrate(&scenario, &split.calibration, mode)?;
            prepare_out_dir(&common.out_dir)?;
            let path = common.out_dir.join("calibration.json");
            CalibrationFile::from_anchors(mode, &outcome.anchors).save(&path)?;
            let violations = outcome.reports.iter().filter(|r| r.prior_violation).count();
            Ok(json!({
                "mode": mode,
                "calibration_deployments": split.calibration.len(),
                "prior_violations": violations,
                "calibration": path,
            }))
        }
        Command::Localize {
            common,
            measurements,
            calibration_file,
        } => {
            let scenario = load_scenario(&common)?;
            let anchors = anchors_for(&scenario, calibration_file.as_deref())?;
            let deployments = io::load_measurements(&measurements)?;
            let rows = harness::localize(&scenario, &anchors, &deployments)?;
            prepare_out_dir(&common.out_dir)?;
            let path = common.out_dir.join("results.csv");
            io::save_results(&path, &rows)?;
            let (evaluation, _) = harness::evaluate(&harness::error_columns(&rows))?;
            Ok(json!({ "localized": rows.len(), "results": path, "evaluation": evaluation }))
        }
        Command::Evaluate { results, out_dir } => {
            let columns = io::load_error_columns(&results)?;
            let (evaluation, cdfs) = harness::evaluate(&columns)?;
            prepare_out_dir(&out_dir)?;
            let metrics: Vec<(&str, &EmpiricalCdf)> = cdfs.iter().map(|(n, c)| (*n, c)).collect();
            io::save_cdf(&out_dir.join("cdf.csv"), &metrics)?;
            io::save_json(&out_dir.join("summary.json"), &evaluation)?;
            Ok(serde_json::to_value(&evaluation).expect("summary serializes"))
        }
        Command::Peb {
            common,
            case,
            calibration_file,
            measurements,
        } => {
            let scenario = load_scenario(&common)?;
            let anchors = anchors_for(&scenario, calibration_file.as_deref())?;
            let cases = case.map_or_else(|| scenario.peb.cases.clone(), |c| vec![c]);
            let deployments = measurements.as_deref().map(io::load_measurements).transpose()?;
            let poses = harness::scenario_poses(&scenario);
            let mut rows = Vec::new();
            let mut medians = serde_json::Map::new();
            for case in cases {
                let samples: Option<Vec<ChannelVector>> = match (case, &deployments) {
                    (1 | 4, Some(d)) => {
                        let split = split_odd_even(d)?;
                        Some(model_residuals(&split.evaluation, &anchors, &scenario.agent_coil, &scenario.environment)?)
                    }
                    (2 | 3, Some(d)) => Some(d.iter().map(|d| d.measured.clone()).collect()),
                    _ => None,
                };
                let noise = harness::noise_model(&scenario, &anchors, case, samples.as_deref())?;
                let case_rows = harness::peb_sweep(&scenario, &anchors, &poses, &noise)?;
                let values: Vec<f64> = case_rows.iter().map(|r| r.peb_m).collect();
                let cdf = EmpiricalCdf::new(&values)?;
                medians.insert(
                    case.to_string(),
                    json!({ "median_m": cdf.median(), "p05_m": cdf.quantile(0.05)?, "p95_m": cdf.quantile(0.95)? }),
                );
                rows.extend(case_rows);
            }
            prepare_out_dir(&common.out_dir)?;
            let path = common.out_dir.join("peb.csv");
            io::save_peb(&path, &rows)?;
            Ok(json!({ "peb": path, "cases": medians }))
        }
        Command::Pipeline { common, calibration } => {
            let scenario = load_scenario(&common)?;
            let mode = calibration.unwrap_or(scenario.calibration.mode);
            let run = harness::run_pipeline(&scenario, mode, Some(&common.out_dir))?;
            Ok(serde_json::to_value(&run.report).expect("report serializes"))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": message.trim() } }));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(summary) => {
            // a closed pipe on stdout is not an error worth a panic
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
