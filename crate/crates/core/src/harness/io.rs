//! CSV and JSON file formats.
//!
//! All CSV files use `,` separators, `.` decimals and a header row. Floats
//! are written in shortest round-trip form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{CalibrationMode, HarnessError};
use crate::calib::Deployment;
use crate::model::{unit_to_spherical, Anchor, ChannelVector, CoilSpec, Pose};
use crate::stats::EmpiricalCdf;

fn csv_error(e: csv::Error) -> HarnessError {
    let line = e.position().map(|p| p.line() as usize);
    HarnessError::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_field(record: &csv::StringRecord, column: usize, name: &str) -> Result<f64, HarnessError> {
    let line = record.position().map(|p| p.line() as usize);
    let raw = record.get(column).ok_or_else(|| HarnessError::Parse {
        line,
        message: format!("missing value for column `{name}`"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| HarnessError::Parse {
        line,
        message: format!("column `{name}`: cannot parse `{raw}` as a number"),
    })
}

fn create(path: &Path) -> Result<File, HarnessError> {
    File::create(path).map_err(|e| HarnessError::io(path, e))
}

fn open(path: &Path) -> Result<File, HarnessError> {
    File::open(path).map_err(|e| HarnessError::io(path, e))
}

/// Writes `i, px, py, pz, ox, oy, oz, h1_re, h1_im, …, hN_re, hN_im`.
pub fn write_measurements<W: Write>(writer: W, deployments: &[Deployment]) -> Result<(), HarnessError> {
    let anchors = deployments.first().map_or(0, |d| d.measured.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["i", "px", "py", "pz", "ox", "oy", "oz"].map(String::from).to_vec();
    for n in 1..=anchors {
        header.push(format!("h{n}_re"));
        header.push(format!("h{n}_im"));
    }
    w.write_record(&header).map_err(csv_error)?;
    for d in deployments {
        if d.measured.len() != anchors {
            return Err(HarnessError::DimensionMismatch(format!(
                "deployment {} has {} channel entries, expected {anchors}",
                d.index,
                d.measured.len()
            )));
        }
        let p = &d.agent_pose.position;
        let o = &d.agent_pose.orientation;
        let mut row = vec![d.index.to_string()];
        row.extend([p.x, p.y, p.z, o.x, o.y, o.z].iter().map(f64::to_string));
        for h in d.measured.iter() {
            row.push(h.re.to_string());
            row.push(h.im.to_string());
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

/// Reads the measurement format written by [`write_measurements`].
///
/// The anchor count is the number of consecutive `hN_re`/`hN_im` column
/// pairs. Orientations are normalized if they are off by more than 1e-9.
pub fn read_measurements<R: Read>(reader: R) -> Result<Vec<Deployment>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_error)?.clone();
    let column = |name: &str| -> Result<usize, HarnessError> {
        header.iter().position(|h| h == name).ok_or_else(|| HarnessError::Parse {
            line: Some(1),
            message: format!("missing column `{name}`"),
        })
    };
    let pose_names = ["i", "px", "py", "pz", "ox", "oy", "oz"];
    let pose_cols = pose_names.iter().map(|n| column(n)).collect::<Result<Vec<_>, _>>()?;
    let mut channel_cols = Vec::new();
    for n in 1.. {
        let re = format!("h{n}_re");
        let im = format!("h{n}_im");
        let has_re = header.iter().any(|h| h == re);
        let has_im = header.iter().any(|h| h == im);
        if !has_re && !has_im {
            break;
        }
        channel_cols.push((column(&re)?, column(&im)?, re, im));
    }
    if channel_cols.is_empty() {
        column("h1_re")?;
    }

    let mut out: Vec<Deployment> = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize);
        if record.len() != header.len() {
            return Err(HarnessError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let v: Vec<f64> = pose_cols
            .iter()
            .zip(pose_names)
            .map(|(c, n)| parse_field(&record, *c, n))
            .collect::<Result<_, _>>()?;
        if v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(HarnessError::Parse {
                line,
                message: format!("column `i`: `{}` is not a deployment index", v[0]),
            });
        }
        let position = Vector3::new(v[1], v[2], v[3]);
        let orientation = Vector3::new(v[4], v[5], v[6]);
        let pose = if (orientation.norm() - 1.0).abs() <= 1e-9 {
            Pose::new(position, orientation)
        } else {
            Pose::from_direction(position, orientation)
        }
        .map_err(|e| HarnessError::Parse {
            line,
            message: e.to_string(),
        })?;
        let measured = channel_cols
            .iter()
            .map(|(re, im, re_name, im_name)| {
                Ok(Complex64::new(
                    parse_field(&record, *re, re_name)?,
                    parse_field(&record, *im, im_name)?,
                ))
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let index = v[0] as usize;
        if out.iter().any(|d| d.index == index) {
            return Err(HarnessError::Parse {
                line,
                message: format!("duplicate deployment index {index}"),
            });
        }
        out.push(Deployment {
            index,
            agent_pose: pose,
            measured: ChannelVector(measured),
        });
    }
    Ok(out)
}

pub fn save_measurements(path: &Path, deployments: &[Deployment]) -> Result<(), HarnessError> {
    write_measurements(create(path)?, deployments)
}

pub fn load_measurements(path: &Path) -> Result<Vec<Deployment>, HarnessError> {
    read_measurements(open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

impl From<ComplexValue> for Complex64 {
    fn from(c: ComplexValue) -> Self {
        Complex64::new(c.re, c.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorCalibration {
    pub xi_re: f64,
    pub xi_im: f64,
    pub b_nlos: [ComplexValue; 3],
    pub pos: [f64; 3],
    pub azimuth: f64,
    pub polar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub mode: CalibrationMode,
    pub anchors: Vec<AnchorCalibration>,
}

impl CalibrationFile {
    pub fn from_anchors(mode: CalibrationMode, anchors: &[Anchor]) -> Self {
        let anchors = anchors
            .iter()
            .map(|a| {
                let (azimuth, polar) = unit_to_spherical(&a.pose.orientation);
                AnchorCalibration {
                    xi_re: a.matching_factor.re,
                    xi_im: a.matching_factor.im,
                    b_nlos: [0, 1, 2].map(|i| a.multipath_field[i].into()),
                    pos: a.pose.position.into(),
                    azimuth,
                    polar,
                }
            })
            .collect();
        Self { mode, anchors }
    }

    /// Calibrated anchors with the given coils, which the file does not store.
    pub fn to_anchors(&self, coils: &[CoilSpec]) -> Result<Vec<Anchor>, HarnessError> {
        if coils.len() != self.anchors.len() {
            return Err(HarnessError::DimensionMismatch(format!(
                "calibration has {} anchors, scenario has {}",
                self.anchors.len(),
                coils.len()
            )));
        }
        Ok(self
            .anchors
            .iter()
            .zip(coils)
            .map(|(a, coil)| {
                let pose = Pose::from_angles(Vector3::from(a.pos), a.azimuth, a.polar);
                let b = a.b_nlos.map(Complex64::from);
                Anchor::new(pose, *coil).with_calibration(Complex64::new(a.xi_re, a.xi_im), Vector3::from(b))
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            line: Some(e.line()),
            message: e.to_string(),
        })
    }
}

/// One row of the localization results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub i: usize,
    pub true_px: f64,
    pub true_py: f64,
    pub true_pz: f64,
    pub true_ox: f64,
    pub true_oy: f64,
    pub true_oz: f64,
    pub est_px: f64,
    pub est_py: f64,
    pub est_pz: f64,
    pub est_ox: f64,
    pub est_oy: f64,
    pub est_oz: f64,
    pub position_error_m: f64,
    pub orientation_error_deg: f64,
    pub residual: f64,
    pub converged: bool,
}

pub fn write_results<W: Write>(writer: W, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn save_results(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    write_results(create(path)?, rows)
}

/// Error columns of a results table. Only `position_error_m` is required.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorColumns {
    pub position_error_m: Vec<f64>,
    pub orientation_error_deg: Option<Vec<f64>>,
}

pub fn read_error_columns<R: Read>(reader: R) -> Result<ErrorColumns, HarnessError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_error)?.clone();
    let pos_col = header
        .iter()
        .position(|h| h == "position_error_m")
        .ok_or_else(|| HarnessError::Parse {
            line: Some(1),
            message: "missing column `position_error_m`".into(),
        })?;
    let ori_col = header.iter().position(|h| h == "orientation_error_deg");
    let mut out = ErrorColumns {
        orientation_error_deg: ori_col.map(|_| Vec::new()),
        ..ErrorColumns::default()
    };
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        out.position_error_m.push(parse_field(&record, pos_col, "position_error_m")?);
        if let (Some(c), Some(v)) = (ori_col, out.orientation_error_deg.as_mut()) {
            v.push(parse_field(&record, c, "orientation_error_deg")?);
        }
    }
    Ok(out)
}

pub fn load_error_columns(path: &Path) -> Result<ErrorColumns, HarnessError> {
    read_error_columns(open(path)?)
}

/// Writes `metric, value, probability` rows of the step CDF of each metric.
pub fn write_cdf<W: Write>(writer: W, metrics: &[(&str, &EmpiricalCdf)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["metric", "value", "probability"]).map_err(csv_error)?;
    for (name, cdf) in metrics {
        for (value, p) in cdf.steps() {
            w.write_record([name.to_string(), value.to_string(), p.to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn save_cdf(path: &Path, metrics: &[(&str, &EmpiricalCdf)]) -> Result<(), HarnessError> {
    write_cdf(create(path)?, metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PebRow {
    pub i: usize,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub ox: f64,
    pub oy: f64,
    pub oz: f64,
    /// `inf` when the Fisher information is singular.
    pub peb_m: f64,
    pub case: String,
}

pub fn write_peb<W: Write>(writer: W, rows: &[PebRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn save_peb(path: &Path, rows: &[PebRow]) -> Result<(), HarnessError> {
    write_peb(create(path)?, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelErrorRow {
    pub i: usize,
    /// 1-based.
    pub anchor: usize,
    pub relative_error: f64,
}

pub fn save_model_errors(path: &Path, rows: &[ModelErrorRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}
