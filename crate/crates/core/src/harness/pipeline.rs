//! Synthesize, calibrate, localize, evaluate and bound.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{self, ErrorColumns, ModelErrorRow, PebRow, ResultRow};
use super::{CalibrationMode, HarnessError, Scenario};
use crate::calib::{
    self, calibrate_essential, full_calibrate, split_odd_even, AnchorCalibrationReport, Deployment,
    FullCalibrationSettings, ModelErrorReport,
};
use crate::crlb::{
    cov_background_correlated, cov_empirical, cov_thermal_independent, position_error_bound,
    EstimationParameter, NoiseLabel, NoiseModel,
};
use crate::emsim::synthesize_dataset;
use crate::locate::{orientation_error, wls_localize};
use crate::model::{Anchor, ChannelVector, Pose};
use crate::stats::EmpiricalCdf;

/// Thin-wire synthesis of every scenario deployment, indexed from 1.
pub fn synthesize(scenario: &Scenario) -> Result<Vec<Deployment>, HarnessError> {
    let h = synthesize_dataset(
        &scenario.simulated_anchors,
        &scenario.deployments,
        &scenario.agent_winding,
        scenario.agent_resistance,
        &scenario.environment,
    )?;
    Ok(scenario
        .deployments
        .iter()
        .zip(h)
        .enumerate()
        .map(|(i, (pose, measured))| Deployment {
            index: i + 1,
            agent_pose: *pose,
            measured,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub mode: CalibrationMode,
    pub anchors: Vec<Anchor>,
    /// Per-anchor MAP diagnostics, full mode only.
    pub reports: Vec<AnchorCalibrationReport>,
}

/// Calibrates the scenario's installed anchors on `calibration_set`.
pub fn calibrate(
    scenario: &Scenario,
    calibration_set: &[Deployment],
    mode: CalibrationMode,
) -> Result<CalibrationOutcome, HarnessError> {
    let (anchors, reports) = match mode {
        CalibrationMode::None => (scenario.anchors.clone(), Vec::new()),
        CalibrationMode::Essential => (
            calibrate_essential(&scenario.anchors, calibration_set, &scenario.agent_coil, &scenario.environment)?,
            Vec::new(),
        ),
        CalibrationMode::Full => {
            let full = full_calibrate(
                &scenario.anchors,
                calibration_set,
                &scenario.priors(),
                &scenario.agent_coil,
                &scenario.environment,
                &FullCalibrationSettings::default(),
            )?;
            (full.anchors, full.reports)
        }
    };
    Ok(CalibrationOutcome { mode, anchors, reports })
}

/// WLS localization of every deployment. Each deployment draws its
/// initializations from a seed derived from its index.
pub fn localize(
    scenario: &Scenario,
    anchors: &[Anchor],
    deployments: &[Deployment],
) -> Result<Vec<ResultRow>, HarnessError> {
    deployments
        .par_iter()
        .map(|d| {
            let est = wls_localize(
                &d.measured,
                anchors,
                &scenario.agent_coil,
                &scenario.environment,
                &scenario.wls_config(d.index),
            )?;
            let t = &d.agent_pose;
            Ok(ResultRow {
                i: d.index,
                true_px: t.position.x,
                true_py: t.position.y,
                true_pz: t.position.z,
                true_ox: t.orientation.x,
                true_oy: t.orientation.y,
                true_oz: t.orientation.z,
                est_px: est.position.x,
                est_py: est.position.y,
                est_pz: est.position.z,
                est_ox: est.orientation.x,
                est_oy: est.orientation.y,
                est_oz: est.orientation.z,
                position_error_m: (est.position - t.position).norm(),
                orientation_error_deg: orientation_error(&est.orientation, &t.orientation),
                residual: est.weighted_residual,
                converged: est.converged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(cdf: &EmpiricalCdf) -> Result<Self, HarnessError> {
        Ok(Self {
            count: cdf.len(),
            median: cdf.median(),
            p90: cdf.quantile(0.9)?,
            max: *cdf.sorted().last().expect("cdf is nonempty"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub position_error_m: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orientation_error_deg: Option<Summary>,
}

/// Error statistics plus the CDFs they come from.
pub fn evaluate(errors: &ErrorColumns) -> Result<(Evaluation, Vec<(&'static str, EmpiricalCdf)>), HarnessError> {
    let position = EmpiricalCdf::new(&errors.position_error_m)?;
    let mut cdfs = vec![("position_error_m", position.clone())];
    let orientation = match &errors.orientation_error_deg {
        Some(v) => {
            let cdf = EmpiricalCdf::new(v)?;
            let s = Summary::of(&cdf)?;
            cdfs.push(("orientation_error_deg", cdf));
            Some(s)
        }
        None => None,
    };
    Ok((
        Evaluation {
            position_error_m: Summary::of(&position)?,
            orientation_error_deg: orientation,
        },
        cdfs,
    ))
}

pub fn error_columns(rows: &[ResultRow]) -> ErrorColumns {
    ErrorColumns {
        position_error_m: rows.iter().map(|r| r.position_error_m).collect(),
        orientation_error_deg: Some(rows.iter().map(|r| r.orientation_error_deg).collect()),
    }
}

/// Noise covariance for one of the six standard cases.
///
/// Cases 1 and 4 take model residuals, cases 2 and 3 take raw channel
/// samples; both are mean-subtracted. Cases 5 and 6 are parametric.
pub fn noise_model(
    scenario: &Scenario,
    anchors: &[Anchor],
    case: u8,
    samples: Option<&[ChannelVector]>,
) -> Result<NoiseModel, HarnessError> {
    let peb = &scenario.peb;
    match case {
        1..=4 => {
            let samples = samples.ok_or_else(|| {
                HarnessError::Config(format!("noise case {case} needs residual or measurement samples"))
            })?;
            Ok(cov_empirical(samples, NoiseLabel::Case(case))?)
        }
        5 => Ok(cov_background_correlated(anchors, &scenario.environment, &peb.background())?),
        6 => Ok(cov_thermal_independent(
            anchors.len(),
            peb.thermal_dbm_hz,
            peb.bandwidth_hz,
            peb.probe_dbm,
        )),
        _ => Err(HarnessError::Config(format!("unknown noise case {case}, expected 1 to 6"))),
    }
}

/// PEB at each `(index, pose)`.
pub fn peb_sweep(
    scenario: &Scenario,
    anchors: &[Anchor],
    poses: &[(usize, Pose)],
    noise: &NoiseModel,
) -> Result<Vec<PebRow>, HarnessError> {
    poses
        .par_iter()
        .map(|(i, pose)| {
            let eta = EstimationParameter::from_pose(pose);
            let peb = position_error_bound(&eta, anchors, &scenario.agent_coil, &scenario.environment, noise)?;
            Ok(PebRow {
                i: *i,
                px: pose.position.x,
                py: pose.position.y,
                pz: pose.position.z,
                ox: pose.orientation.x,
                oy: pose.orientation.y,
                oz: pose.orientation.z,
                peb_m: peb,
                case: noise.label.to_string(),
            })
        })
        .collect()
}

pub fn scenario_poses(scenario: &Scenario) -> Vec<(usize, Pose)> {
    scenario.deployments.iter().enumerate().map(|(i, p)| (i + 1, *p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelErrorSummary {
    pub median: f64,
    pub p90: f64,
    pub count: usize,
    pub excluded: usize,
}

impl From<&ModelErrorReport> for ModelErrorSummary {
    fn from(r: &ModelErrorReport) -> Self {
        Self {
            median: r.median,
            p90: r.p90,
            count: r.values.len(),
            excluded: r.excluded.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub calibration: CalibrationMode,
    pub deployments: usize,
    /// Evaluation-set relative model error after the selected calibration.
    pub model_error: ModelErrorSummary,
    /// Same statistic after essential calibration alone, for comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub essential_model_error: Option<ModelErrorSummary>,
    pub localization: Evaluation,
    /// Median PEB per noise case, meters.
    pub peb_median_m: BTreeMap<String, f64>,
    pub prior_violations: usize,
}

/// Everything the pipeline computes, kept in memory.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub deployments: Vec<Deployment>,
    pub calibration: CalibrationOutcome,
    pub model_error: ModelErrorReport,
    pub results: Vec<ResultRow>,
    pub peb: Vec<PebRow>,
}

/// synthesize → split → calibrate → model error → localize evaluation set
/// → PEB for the configured cases. Writes files when `out_dir` is given.
pub fn run_pipeline(
    scenario: &Scenario,
    mode: CalibrationMode,
    out_dir: Option<&Path>,
) -> Result<PipelineRun, HarnessError> {
    let deployments = synthesize(scenario)?;
    let split = split_odd_even(&deployments)?;
    let calibration = calibrate(scenario, &split.calibration, mode)?;
    let anchors = &calibration.anchors;
    let env = &scenario.environment;
    let coil = &scenario.agent_coil;

    let model_error = calib::relative_model_error(&split.evaluation, anchors, coil, env)?;
    let essential_model_error = if mode == CalibrationMode::Full {
        let essential = calibrate(scenario, &split.calibration, CalibrationMode::Essential)?;
        let r = calib::relative_model_error(&split.evaluation, &essential.anchors, coil, env)?;
        Some(ModelErrorSummary::from(&r))
    } else {
        None
    };

    let results = localize(scenario, anchors, &split.evaluation)?;
    let (localization, cdfs) = evaluate(&error_columns(&results))?;

    let residuals = calib::model_residuals(&split.evaluation, anchors, coil, env)?;
    let poses = scenario_poses(scenario);
    let mut peb = Vec::new();
    let mut peb_median_m = BTreeMap::new();
    for &case in &scenario.peb.cases {
        let samples = matches!(case, 1 | 4).then_some(residuals.as_slice());
        if matches!(case, 2 | 3) {
            log::warn!("noise case {case} needs stationary measurements; skipped in the synthetic pipeline");
            continue;
        }
        let noise = noise_model(scenario, anchors, case, samples)?;
        let rows = peb_sweep(scenario, anchors, &poses, &noise)?;
        let values: Vec<f64> = rows.iter().map(|r| r.peb_m).collect();
        peb_median_m.insert(case.to_string(), EmpiricalCdf::new(&values)?.median());
        peb.extend(rows);
    }

    let report = PipelineReport {
        calibration: mode,
        deployments: deployments.len(),
        model_error: ModelErrorSummary::from(&model_error),
        essential_model_error,
        localization,
        peb_median_m,
        prior_violations: calibration.reports.iter().filter(|r| r.prior_violation).count(),
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        io::save_measurements(&dir.join("measurements.csv"), &deployments)?;
        io::CalibrationFile::from_anchors(mode, anchors).save(&dir.join("calibration.json"))?;
        io::save_model_errors(&dir.join("model_error.csv"), &model_error_rows(&split.evaluation, &model_error))?;
        io::save_results(&dir.join("results.csv"), &results)?;
        let metrics: Vec<(&str, &EmpiricalCdf)> = cdfs.iter().map(|(n, c)| (*n, c)).collect();
        io::save_cdf(&dir.join("cdf.csv"), &metrics)?;
        io::save_peb(&dir.join("peb.csv"), &peb)?;
        io::save_json(&dir.join("summary.json"), &report)?;
    }

    Ok(PipelineRun {
        report,
        deployments,
        calibration,
        model_error,
        results,
        peb,
    })
}

/// Pairs each model-error value with its deployment and anchor.
fn model_error_rows(evaluation: &[Deployment], report: &ModelErrorReport) -> Vec<ModelErrorRow> {
    let mut values = report.values.iter();
    let mut rows = Vec::with_capacity(report.values.len());
    for d in evaluation {
        for n in 0..d.measured.len() {
            if report.excluded.contains(&(d.index, n)) {
                continue;
            }
            if let Some(v) = values.next() {
                rows.push(ModelErrorRow {
                    i: d.index,
                    anchor: n + 1,
                    relative_error: *v,
                });
            }
        }
    }
    rows
}
