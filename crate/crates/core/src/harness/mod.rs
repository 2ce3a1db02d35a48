//! Scenario layer: configuration, file formats and end-to-end pipelines.
//!
//! The default scenario has eight anchors around a 3 m × 3 m area and a
//! 45-position × 6-orientation deployment grid. Everything is
//! deterministic for a given seed.

mod config;
pub mod io;
mod pipeline;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    default_anchors, AnchorConfig, BoundsConfig, CalibrationConfig, CoilConfig, EnvironmentConfig,
    GridConfig, PebConfig, PerturbationConfig, Scenario, ScenarioConfig, WlsSettings,
};
pub use pipeline::{
    calibrate, error_columns, evaluate, localize, noise_model, peb_sweep, run_pipeline,
    scenario_poses, synthesize, CalibrationOutcome, Evaluation, ModelErrorSummary, PipelineReport,
    PipelineRun, Summary,
};

use crate::calib::CalibrationError;
use crate::crlb::CrlbError;
use crate::emsim::EmsimError;
use crate::locate::LocateError;
use crate::model::ModelError;
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Emsim(#[from] EmsimError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error(transparent)]
    Crlb(#[from] CrlbError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Parse { .. } => "parse",
            Self::DimensionMismatch(_) => "dimension_mismatch",
            Self::Model(_) => "model",
            Self::Emsim(_) => "emsim",
            Self::Calibration(_) => "calibration",
            Self::Locate(_) => "locate",
            Self::Crlb(_) => "crlb",
            Self::Stats(_) => "stats",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    None,
    Essential,
    #[default]
    Full,
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Essential => "essential",
            Self::Full => "full",
        })
    }
}

impl FromStr for CalibrationMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "essential" => Ok(Self::Essential),
            "full" => Ok(Self::Full),
            _ => Err(HarnessError::Config(format!(
                "unknown calibration mode `{s}`, expected none, essential or full"
            ))),
        }
    }
}
